"""Reeb dynamics after surgery: ambient affine steps alternating with exact handle passages.

State conventions (all rescaled):

* ``z`` (per chord) is the offset of the chord's start point from its nominal
  start on the core sphere, in units of ``sigma = epsilon**(2s+2)``;
* ``eta`` is the orthographic hemisphere coordinate of the entry fiber at the
  chord's end.

Handle passages are solved backwards (exit base given, entry fiber unknown),
which is the contracting direction, so both the chord shooting and the orbit
fixed point are computed with backward maps.  Actions are reported in unscaled
units: chord actions plus ``epsilon**(2p)`` times the rescaled handle deviation.
"""
from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ambient import ChordAtlas, is_unattached, load_atlas, transition_map
from .errors import (ContractViolation, DivergenceError, DomainError,
                     HandleSurgeryError, NotFoundError, OutOfChartError,
                     PreconditionError, ThresholdNotFoundError)
from .flows import PassageModel, endpoint_core, orthonormal_complement
from .geometry import action_sum
from .handle import HandleParams
from .words import (CyclicWord, Word, enumerate_cyclic, enumerate_words,
                    min_action_gap, word_action)

RESIDUAL_TOL = 1e-9
SPREAD_TOL = 1e-6
ITERATION_CAP = 10_000
OFFSET_CHART = 0.5


@dataclass
class FoundChord:
    """A chord after surgery.  ``action`` is the rounded total; ``action_correction``
    is the excess over the word action in unscaled units, kept separately because it
    is far below the rounding unit of the total."""
    word: Word
    launch: list | None
    landing_residual: float
    action: float
    iterations: int
    deviation: float
    offsets: list
    spread: float = 0.0
    action_correction: float = 0.0


@dataclass
class FoundOrbit:
    cyclic_word: CyclicWord
    fixed_point: tuple
    forward_residual: float
    backward_residual: float
    action: float
    contraction: float
    iterations: int
    deviation: float
    offsets: list
    action_correction: float = 0.0


@dataclass
class HandleState:
    """Exit direction of the last handle passage plus the accumulated action (unscaled units)."""
    base: np.ndarray
    action: float = 0.0


class SurgerySystem:
    """Post-surgery dynamics for one parameter tuple and one atlas."""

    def __init__(self, params: HandleParams, atlas: ChordAtlas):
        if params.n != atlas.dimension:
            raise ContractViolation(f"handle dimension {params.n} differs from atlas dimension {atlas.dimension}")
        self.params = params
        self.atlas = atlas
        self.model = PassageModel(params)
        self.sigma = params.epsilon ** (2 * params.s + 2)
        self.n = params.n
        self._end_base = {}
        self._start = {}
        self._inv = {}
        for c in atlas.chords:
            self._end_base[c.id] = self.model.crossing(endpoint_core("end", c.end_ordinal, self.n))
            zeta = endpoint_core("start", c.start_ordinal, self.n)
            self._start[c.id] = (zeta, orthonormal_complement(zeta))
            self._inv[c.id] = np.linalg.inv(c.linear)

    # -- geometry of chord ends ----------------------------------------------

    def end_base(self, chord_id: str) -> np.ndarray:
        return self._end_base[chord_id]

    def check_offset(self, z):
        if not self.sigma * np.linalg.norm(z) <= OFFSET_CHART:
            raise OutOfChartError(f"start offset {np.linalg.norm(z):.4g} leaves the core chart")

    def exit_base(self, chord_id: str, z) -> np.ndarray:
        """Gluing-sphere direction where a trajectory starting at offset ``z`` leaves the handle."""
        self.check_offset(z)
        zeta, frame = self._start[chord_id]
        return self.model.crossing(zeta + frame @ (self.sigma * np.asarray(z)))

    def offset_of_base(self, chord_id: str, base) -> np.ndarray:
        zeta0, frame = self._start[chord_id]
        zeta = self.model.core_of_base(base)
        if zeta @ zeta0 <= 0:
            raise OutOfChartError("exit direction is not near the chord start")
        return frame.T @ zeta / (zeta @ zeta0) / self.sigma

    def pullback(self, chord_id: str, eta) -> np.ndarray:
        """Start offset whose ambient step lands on the entry coordinate ``eta``."""
        c = self.atlas.chord(chord_id)
        z = self._inv[chord_id] @ (np.asarray(eta) - c.offset)
        self.check_offset(z)
        return z

    def passage_eta(self, in_id: str, out_id: str, z_out):
        """Entry coordinate at the end of ``in_id`` that exits towards offset ``z_out`` of ``out_id``."""
        base_in = self._end_base[in_id]
        passage = self.model.passage_preimage(base_in, self.exit_base(out_id, z_out))
        return self.model.chart(base_in, passage.fiber), passage

    def landing_eta(self, in_id: str):
        base_in = self._end_base[in_id]
        passage = self.model.landing(base_in)
        return self.model.chart(base_in, passage.fiber), passage

    # -- chord words ---------------------------------------------------------

    def _word_kind(self, ids):
        chords = [self.atlas.chord(i) for i in ids]
        for a, b in zip(chords, chords[1:]):
            if a.end_component != b.start_component:
                raise PreconditionError(f"word {ids} is not composable")
            if is_unattached(a.end_component):
                raise PreconditionError(f"word {ids} passes through the unattached component")
        return chords, not is_unattached(chords[0].start_component), not is_unattached(chords[-1].end_component)

    def chord_residual(self, ids, Z) -> np.ndarray:
        chords, _, lands = self._word_kind(ids)
        m = len(chords)
        Z = np.asarray(Z).reshape(m, self.n - 1)
        res = np.empty_like(Z)
        for j, c in enumerate(chords):
            if j == m - 1:
                target = self.landing_eta(c.id)[0] if lands else np.zeros(self.n - 1)
            else:
                target = self.passage_eta(c.id, chords[j + 1].id, Z[j + 1])[0]
            res[j] = Z[j] - self._inv[c.id] @ (target - c.offset)
        return res.reshape(-1)

    def chord_backward_sweep(self, ids) -> np.ndarray:
        """Direct backward propagation from the landing condition to the first offset."""
        chords, _, lands = self._word_kind(ids)
        m = len(chords)
        Z = np.zeros((m, self.n - 1))
        target = self.landing_eta(chords[-1].id)[0] if lands else np.zeros(self.n - 1)
        Z[m - 1] = self.pullback(chords[-1].id, target)
        for j in range(m - 2, -1, -1):
            eta, _ = self.passage_eta(chords[j].id, chords[j + 1].id, Z[j + 1])
            Z[j] = self.pullback(chords[j].id, eta)
        return Z

    def chord_deviation(self, ids, Z) -> float:
        """Rescaled action gained over the word's chord actions."""
        chords, launches, lands = self._word_kind(ids)
        m = len(chords)
        Z = np.asarray(Z).reshape(m, self.n - 1)
        parts = []
        if launches:
            parts.append(self.model.passage_deviation(self.model.launch(self.exit_base(chords[0].id, Z[0])),
                                                      entry_from_lambda=False))
        for j in range(m - 1):
            _, passage = self.passage_eta(chords[j].id, chords[j + 1].id, Z[j + 1])
            parts.append(self.model.passage_deviation(passage))
        if lands:
            parts.append(self.model.passage_deviation(self.landing_eta(chords[-1].id)[1], exit_to_lambda=False))
        return math.fsum(parts)

    # -- cyclic words ----------------------------------------------------------

    def _check_cyclic(self, ids):
        chords = [self.atlas.chord(i) for i in ids]
        for a, b in zip(chords, chords[1:] + chords[:1]):
            if a.end_component != b.start_component or is_unattached(a.end_component):
                raise PreconditionError(f"cyclic word {ids} is not cyclically composable through the handle")
        return chords

    def orbit_residual(self, ids, Z) -> np.ndarray:
        chords = self._check_cyclic(ids)
        m = len(chords)
        Z = np.asarray(Z).reshape(m, self.n - 1)
        res = np.empty_like(Z)
        for j, c in enumerate(chords):
            nxt = (j + 1) % m
            eta, _ = self.passage_eta(c.id, chords[nxt].id, Z[nxt])
            res[j] = Z[j] - self._inv[c.id] @ (eta - c.offset)
        return res.reshape(-1)

    def once_around_backward(self, ids, z_first) -> np.ndarray:
        """Backward return map on the first chord's start offsets; returns all offsets."""
        chords = self._check_cyclic(ids)
        m = len(chords)
        Z = np.zeros((m, self.n - 1))
        nxt = np.asarray(z_first, dtype=float)
        for j in range(m - 1, -1, -1):
            eta, _ = self.passage_eta(chords[j].id, chords[(j + 1) % m].id, nxt)
            Z[j] = self.pullback(chords[j].id, eta)
            nxt = Z[j]
        return Z

    def forward_residual(self, ids, Z) -> float:
        """Mismatch, in entry-fiber coordinates, between each ambient step and the
        passage that closes the orbit."""
        chords = self._check_cyclic(ids)
        m = len(chords)
        Z = np.asarray(Z).reshape(m, self.n - 1)
        worst = 0.0
        for j, c in enumerate(chords):
            eta, _ = self.passage_eta(c.id, chords[(j + 1) % m].id, Z[(j + 1) % m])
            worst = max(worst, float(np.linalg.norm(c.linear @ Z[j] + c.offset - eta)))
        return worst

    def orbit_deviation(self, ids, Z) -> float:
        chords = self._check_cyclic(ids)
        m = len(chords)
        Z = np.asarray(Z).reshape(m, self.n - 1)
        parts = []
        for j, c in enumerate(chords):
            _, passage = self.passage_eta(c.id, chords[(j + 1) % m].id, Z[(j + 1) % m])
            parts.append(self.model.passage_deviation(passage))
        return math.fsum(parts)

    # -- forward composite step -------------------------------------------------

    def composite_step(self, chord_id: str, state: HandleState) -> HandleState:
        """Ambient step along ``chord_id`` from the exit direction in ``state``,
        then the forward handle passage.  Accurate for shallow passages only."""
        c = self.atlas.chord(chord_id)
        z = self.offset_of_base(chord_id, state.base)
        eta, action = transition_map(c, z, state.action, radius=OFFSET_CHART / self.sigma)
        base_in = self._end_base[chord_id]
        fiber = self.model.unchart(base_in, eta)
        passage = self.model.forward(base_in, fiber)
        u1, w1 = passage.exit_uw
        y1 = (u1 - w1) / 2.0
        deviation = self.model.passage_deviation(passage)
        return HandleState(y1 / np.linalg.norm(y1), action + deviation * self.params.action_scale)


# ----------------------------------------------------------------------------
# Solvers
# ----------------------------------------------------------------------------

def _newton(residual, x0, jac=None, tol=RESIDUAL_TOL, max_iter=50, fd_step=1e-6):
    """Newton iteration with a finite-difference Jacobian and backtracking.

    Returns (solution, residual norm, iterations, jacobian)."""
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.max(np.abs(r)))
    iters = 0
    while norm > tol * 1e-3 and iters < max_iter:
        if jac is None:
            jac = np.empty((r.size, x.size))
            for k in range(x.size):
                h = fd_step * max(1.0, abs(x[k]))
                xp = x.copy()
                xp[k] += h
                jac[:, k] = (residual(xp) - r) / h
        step = np.linalg.solve(jac, -r)
        t = 1.0
        while True:
            try:
                r_new = residual(x + t * step)
                new_norm = float(np.max(np.abs(r_new)))
            except (OutOfChartError, DomainError):
                new_norm = math.inf
            if new_norm < norm or t < 1e-4:
                break
            t *= 0.5
        iters += 1
        if not math.isfinite(new_norm):
            break
        if new_norm >= norm:
            if norm <= tol:
                break
            jac = None
            if iters >= max_iter:
                break
            continue
        x, r, norm = x + t * step, r_new, new_norm
    return x, norm, iters, jac


def _rng_for(tag: str, seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(tag.encode())])


def _multistart_seeds(rng, count, size, scale=1.0):
    return [rng.normal(scale=scale, size=size) for _ in range(count)]


def find_chord_for_word(params: HandleParams, atlas: ChordAtlas, word, multistart: int = 10,
                        seed: int = 0, system: SurgerySystem | None = None) -> FoundChord:
    """Shoot from the co-core sphere (or the unattached component) through the word's chords."""
    ids = tuple(word.ids if isinstance(word, Word) else word)
    action = word_action(atlas, ids)
    if not action < atlas.action_cap:
        raise PreconditionError(f"word action {action} is not below the cap {atlas.action_cap}")
    if not isinstance(word, Word):
        word = Word(ids, action)
    system = system or SurgerySystem(params, atlas)
    chords, launches, _ = system._word_kind(ids)
    size = len(ids) * (params.n - 1)

    def residual(x):
        return system.chord_residual(ids, x)

    rng = _rng_for("chord:" + ".".join(ids), seed)
    starts = _multistart_seeds(rng, max(1, multistart), size)
    solutions, best, jac, total_iters = [], math.inf, None, 0
    for x0 in starts:
        try:
            x, norm, iters, jac = _newton(residual, x0, jac)
        except (OutOfChartError, DomainError):
            continue
        total_iters += iters
        best = min(best, norm)
        if norm <= RESIDUAL_TOL:
            solutions.append(x)
    if not solutions:
        raise NotFoundError(f"no chord found for word {'.'.join(ids)}", best_residual=best)
    ref = solutions[0]
    spread = max(float(np.max(np.abs(s - ref))) for s in solutions)
    Z = ref.reshape(len(ids), params.n - 1)
    landing = float(np.max(np.abs(residual(ref))))
    deviation = system.chord_deviation(ids, Z)
    launch = None
    if launches:
        launch = system.model.launch(system.exit_base(chords[0].id, Z[0])).fiber.tolist()
    correction = deviation * params.action_scale
    total = action_sum([action, correction], compensated=True)
    return FoundChord(word, launch, landing, total, total_iters, deviation, Z.tolist(), spread, correction)


def find_orbit_for_cyclic_word(params: HandleParams, atlas: ChordAtlas, cyclic_word,
                               system: SurgerySystem | None = None, max_iter: int = ITERATION_CAP,
                               probe: float = 0.5) -> FoundOrbit:
    """Fixed point of the once-around backward map, polished by Newton on all offsets."""
    ids = tuple(cyclic_word.ids if isinstance(cyclic_word, CyclicWord) else cyclic_word)
    action = word_action(atlas, ids)
    if not action < atlas.action_cap:
        raise PreconditionError(f"cyclic word action {action} is not below the cap")
    if not isinstance(cyclic_word, CyclicWord):
        cyclic_word = CyclicWord(ids, action)
    system = system or SurgerySystem(params, atlas)
    system._check_cyclic(ids)
    m, k = len(ids), params.n - 1

    z = np.zeros(k)
    trace = []
    for it in range(1, max_iter + 1):
        Z = system.once_around_backward(ids, z)
        step = float(np.max(np.abs(Z[0] - z)))
        trace.append(step)
        z = Z[0]
        if step <= RESIDUAL_TOL * 1e-3:
            break
    else:
        raise DivergenceError(f"orbit iteration for {cyclic_word.label} did not converge", trace=trace[-20:])
    Z = system.once_around_backward(ids, z)
    x, _, newton_iters, _ = _newton(lambda v: system.orbit_residual(ids, v), Z.reshape(-1))
    Z = x.reshape(m, k)
    backward = float(np.max(np.abs(system.once_around_backward(ids, Z[0])[0] - Z[0])))
    forward = system.forward_residual(ids, Z)

    rng = _rng_for("orbit:" + ".".join(ids), 0)
    lip = 0.0
    g0 = system.once_around_backward(ids, Z[0])[0]
    for _ in range(3):
        d = rng.normal(size=k)
        d *= probe / np.linalg.norm(d)
        g1 = system.once_around_backward(ids, Z[0] + d)[0]
        lip = max(lip, float(np.linalg.norm(g1 - g0)) / probe)
    c0 = atlas.chord(ids[0])
    fixed = (Z[0].tolist(), (c0.linear @ Z[0] + c0.offset).tolist())
    deviation = system.orbit_deviation(ids, Z)
    correction = deviation * params.action_scale
    total = action_sum([action, correction], compensated=True)
    return FoundOrbit(cyclic_word, fixed, forward, backward, total, lip, len(trace) + newton_iters,
                      deviation, Z.tolist(), correction)


def composite_step(params: HandleParams, atlas: ChordAtlas, chord_id: str, state: HandleState,
                   system: SurgerySystem | None = None) -> HandleState:
    system = system or SurgerySystem(params, atlas)
    return system.composite_step(chord_id, state)


# ----------------------------------------------------------------------------
# Bijection report
# ----------------------------------------------------------------------------

def surgery_words(atlas: ChordAtlas) -> list[tuple[str, str, Word]]:
    """Words whose interior junctions lie on attached components, for every component pair."""
    out = []
    for a in atlas.components:
        for b in atlas.components:
            for w in enumerate_words(atlas, a, b):
                chords = [atlas.chord(i) for i in w.ids]
                if all(not is_unattached(c.end_component) for c in chords[:-1]):
                    out.append((a, b, w))
    return out


def surgery_cyclic_words(atlas: ChordAtlas) -> list[CyclicWord]:
    out = []
    for w in enumerate_cyclic(atlas):
        if all(not is_unattached(atlas.chord(i).end_component) for i in w.ids):
            out.append(w)
    return out


def _solve_entry(task):
    """Worker: solve one word or cyclic word; returns a JSON-ready record."""
    kind, params_dict, atlas_doc, ids, meta, multistart, seed = task
    params = HandleParams(**params_dict)
    atlas = load_atlas(atlas_doc, gap_floor=0.0)
    action = word_action(atlas, ids)
    record = {"kind": kind, "word": list(ids), "word_action": action, **meta}
    try:
        system = SurgerySystem(params, atlas)
        if kind == "chord":
            found = find_chord_for_word(params, atlas, Word(tuple(ids), action), multistart, seed, system)
            record.update(status="found", residual=found.landing_residual, spread=found.spread,
                          action=found.action, deviation=found.deviation,
                          action_deviation=found.action_correction)
            if found.spread > SPREAD_TOL:
                record.update(status="multiple", failure="multistart spread above tolerance")
        else:
            found = find_orbit_for_cyclic_word(params, atlas, CyclicWord(tuple(ids), action), system)
            record.update(status="found", residual=max(found.forward_residual, found.backward_residual),
                          contraction=found.contraction, action=found.action, deviation=found.deviation,
                          action_deviation=found.action_correction)
            if found.contraction >= 1.0:
                record.update(status="failed", failure="return map is not a contraction")
        if record["status"] == "found" and record["residual"] > RESIDUAL_TOL:
            record.update(status="failed", failure="residual above tolerance")
    except HandleSurgeryError as exc:
        record.update(status="failed", failure=f"{exc.code}: {exc}")
    return record


@dataclass
class BijectionReport:
    epsilon: float
    passed: bool
    action_gap: float
    chords: list = field(default_factory=list)
    orbits: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    misses: int = 0
    multiplicities: int = 0
    max_action_deviation: float = 0.0
    failure_modes: list = field(default_factory=list)

    def to_document(self) -> dict:
        return asdict(self)


def verify_bijection(params: HandleParams, atlas: ChordAtlas, jobs: int = 1, multistart: int = 10,
                     seed: int = 0) -> BijectionReport:
    """Solve every surgery word and cyclic word and check the one-to-one correspondence.

    A word fails when the solver finds no solution, the residual or multistart
    spread is above tolerance, a chart is left, or the action deviation is at
    least half the minimal action gap (the word could then not be told apart
    from a neighbouring action level).
    """
    gap = min_action_gap(atlas).gap
    tasks = []
    params_dict = {k: getattr(params, k) for k in ("epsilon", "p", "s", "q", "l", "n")}
    params_dict["validate"] = params.validate
    doc = atlas.to_document()
    for a, b, w in surgery_words(atlas):
        tasks.append(("chord", params_dict, doc, w.ids, {"from": a, "to": b}, multistart, seed))
    for w in surgery_cyclic_words(atlas):
        tasks.append(("orbit", params_dict, doc, w.ids, {}, multistart, seed))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_solve_entry, tasks, chunksize=1))
    else:
        records = [_solve_entry(t) for t in tasks]

    report = BijectionReport(params.epsilon, True, gap)
    for rec in records:
        if rec["status"] == "found" and abs(rec["action_deviation"]) >= gap / 2:
            rec.update(status="failed", failure="action deviation reaches half the action gap")
        (report.chords if rec["kind"] == "chord" else report.orbits).append(rec)
    counts = {}
    for rec in report.chords:
        key = f"{rec['from']}->{rec['to']}"
        entry = counts.setdefault(key, {"words": 0, "found": 0})
        entry["words"] += 1
        entry["found"] += rec["status"] == "found"
    counts["cyclic"] = {"words": len(report.orbits), "found": sum(r["status"] == "found" for r in report.orbits)}
    report.counts = counts
    report.misses = sum(r["status"] == "failed" for r in records)
    report.multiplicities = sum(r["status"] == "multiple" for r in records)
    devs = [abs(r["action_deviation"]) for r in records if "action_deviation" in r]
    report.max_action_deviation = max(devs) if devs else 0.0
    report.failure_modes = sorted({r["failure"] for r in records if "failure" in r})
    report.passed = report.misses == 0 and report.multiplicities == 0
    return report


@dataclass
class ThresholdReport:
    epsilon0: float
    bracket: tuple
    scan: list
    monotone: bool


def epsilon_threshold(params: HandleParams, atlas: ChordAtlas, scan=(0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                      width: float = 0.05, multistart: int = 2) -> ThresholdReport:
    """Largest scanned epsilon at which the bijection passes, refined by bisection.

    The scan outcomes are reported; success is not assumed monotone in epsilon.
    """
    def passes(eps):
        try:
            return verify_bijection(params.with_epsilon(eps), atlas, multistart=multistart).passed
        except HandleSurgeryError:
            return False

    outcomes = [(eps, passes(eps)) for eps in scan]
    passing = [e for e, ok in outcomes if ok]
    if not passing:
        raise ThresholdNotFoundError("no scanned epsilon passes")
    lo = max(passing)
    above = [e for e, ok in outcomes if e > lo]
    monotone = all(ok for e, ok in outcomes if e <= lo)
    if not above:
        return ThresholdReport(lo, (lo, lo), outcomes, monotone)
    hi = min(above)
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            lo = mid
        else:
            hi = mid
    return ThresholdReport(lo, (lo, hi), outcomes, monotone)
