"""Asymptotic operators on loops, Conley-Zehnder grading and curve-tail expansions.

The operator is ``-J0 d/dt - S0(t)`` on loops t in R/Z with values in
C^m = R^(2m), with J0 acting as multiplication by i on each interleaved
(real, imaginary) pair.  It is discretized by a Fourier Galerkin method, which
gives a Hermitian matrix over the modes |k| <= (M-1)//2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import minimize_scalar

from .errors import (ContractViolation, DegeneracyError, InconclusiveError,
                     NoConvergenceError, NoValidRadiiError, SymmetryError,
                     UnclassifiableError)

NOISE_FLOOR = 1e-8
FIT_RESIDUAL_THRESHOLD = 1e-4
SIGNIFICANCE = 5.0


def complex_structure(m: int) -> np.ndarray:
    """Block-diagonal J0 = [[0, -1], [1, 0]] on R^(2m)."""
    return np.kron(np.eye(m), np.array([[0.0, -1.0], [1.0, 0.0]]))


@dataclass
class AsymptoticOperatorSpec:
    """Closed loop of symmetric 2m x 2m matrices sampled at t = j/M, j = 0..M.

    ``loop`` (optional) is a callable t -> matrix used when the grid is refined.
    """
    samples: np.ndarray
    loop: object = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 3 or s.shape[1] != s.shape[2] or s.shape[1] % 2:
            raise ContractViolation(f"samples must have shape (M+1, 2m, 2m), got {s.shape}")
        if not np.allclose(s, np.transpose(s, (0, 2, 1)), atol=1e-12, rtol=0):
            raise SymmetryError("loop samples are not symmetric within 1e-12")
        if not np.allclose(s[0], s[-1], atol=1e-12, rtol=0):
            raise ContractViolation("loop does not close: first and last samples differ")
        self.samples = s

    @property
    def grid_size(self) -> int:
        return self.samples.shape[0] - 1

    @property
    def dimension(self) -> int:
        return self.samples.shape[1] // 2

    @classmethod
    def from_function(cls, loop, m: int, M: int):
        t = np.arange(M + 1) / M
        samples = np.array([loop(ti) for ti in t])
        samples[-1] = samples[0]
        return cls(samples.reshape(M + 1, 2 * m, 2 * m), loop)

    @classmethod
    def constant(cls, matrix, M: int):
        matrix = np.asarray(matrix, dtype=float)
        return cls.from_function(lambda t: matrix, matrix.shape[0] // 2, M)

    def refined(self, M: int) -> "AsymptoticOperatorSpec":
        if self.loop is not None:
            return AsymptoticOperatorSpec.from_function(self.loop, self.dimension, M)
        # Fourier interpolation of the open samples
        coeffs = np.fft.fft(self.samples[:-1], axis=0) / self.grid_size
        t = np.arange(M + 1) / M
        modes = np.fft.fftfreq(self.grid_size, 1.0 / self.grid_size)
        values = np.einsum("kab,tk->tab", coeffs, np.exp(2j * np.pi * np.outer(t, modes))).real
        values = 0.5 * (values + np.transpose(values, (0, 2, 1)))
        values[-1] = values[0]
        return AsymptoticOperatorSpec(values)


@dataclass
class Eigenspace:
    value: float
    multiplicity: int
    coefficients: np.ndarray  # (multiplicity, modes, 2m) complex Fourier coefficients
    modes: np.ndarray

    def evaluate(self, t) -> np.ndarray:
        """Real eigenfunction samples, shape (multiplicity, len(t), 2m)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phase = np.exp(2j * np.pi * np.outer(t, self.modes))
        return np.einsum("tk,akd->atd", phase, self.coefficients).real


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    multiplicities: list
    eigenspaces: list
    grid_size: int
    error_estimate: float

    def samples(self, t) -> list:
        return [e.evaluate(t) for e in self.eigenspaces]


def _galerkin_matrix(spec: AsymptoticOperatorSpec):
    M = spec.grid_size
    d = 2 * spec.dimension
    kmax = (M - 1) // 2
    modes = np.arange(-kmax, kmax + 1)
    shat = np.fft.fft(spec.samples[:-1], axis=0) / M  # index by frequency mod M
    J = complex_structure(spec.dimension)
    size = modes.size * d
    H = np.zeros((size, size), dtype=complex)
    for a, k in enumerate(modes):
        H[a * d:(a + 1) * d, a * d:(a + 1) * d] += -1j * 2 * np.pi * k * J
        for b, l in enumerate(modes):
            H[a * d:(a + 1) * d, b * d:(b + 1) * d] -= shat[(k - l) % M]
    return 0.5 * (H + H.conj().T), modes


def _negative_eigenspaces(spec: AsymptoticOperatorSpec, count: int):
    H, modes = _galerkin_matrix(spec)
    try:
        values, vectors = eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"eigensolver failed (condition {np.linalg.cond(H):.3e})") from exc
    d = 2 * spec.dimension
    neg = np.where(values < -1e-9)[0][::-1]
    spaces = []
    i = 0
    while i < neg.size and len(spaces) < count:
        j = i
        lam = values[neg[i]]
        while j + 1 < neg.size and abs(values[neg[j + 1]] - lam) <= 1e-7 * max(1.0, abs(lam)):
            j += 1
        idx = neg[i:j + 1]
        vecs = vectors[:, idx].T.reshape(len(idx), modes.size, d)
        spaces.append(_real_basis(float(np.mean(values[idx])), vecs, modes))
        i = j + 1
    return spaces


def _real_basis(value, vecs, modes) -> Eigenspace:
    """Orthonormal real eigenfunctions spanning the real parts of the complex ones."""
    conj = vecs[:, ::-1, :].conj()  # coefficients of the complex conjugate function
    candidates = np.concatenate([(vecs + conj) / 2, (vecs - conj) / 2j])
    flat = candidates.reshape(candidates.shape[0], -1)
    u, s, vh = np.linalg.svd(flat, full_matrices=False)
    rank = int(np.sum(s > 1e-8 * s[0]))
    basis = vh[:rank].reshape(rank, modes.size, -1)
    # fix an overall phase so each basis function is real-valued
    basis = np.array([_realify(b) for b in basis])
    return Eigenspace(value, rank, basis, modes)


def _realify(c):
    conj = c[::-1].conj()
    r = (c + conj) / 2
    if np.linalg.norm(r) < 1e-6:
        r = (c - conj) / 2j
    return r / np.linalg.norm(r)


def spectrum(spec: AsymptoticOperatorSpec, count: int) -> SpectrumResult:
    """The ``count`` distinct negative eigenvalues closest to zero, with eigenspaces.

    The error estimate is the largest eigenvalue change when M is doubled.
    """
    if spec.grid_size < 8 * count:
        raise ContractViolation(f"grid size {spec.grid_size} must be at least 8 * count = {8 * count}")
    spaces = _negative_eigenspaces(spec, count)
    fine = _negative_eigenspaces(spec.refined(2 * spec.grid_size), count)
    err = max((abs(a.value - b.value) for a, b in zip(spaces, fine)), default=0.0)
    return SpectrumResult(np.array([s.value for s in spaces]), [s.multiplicity for s in spaces],
                          spaces, spec.grid_size, float(err))


# ----------------------------------------------------------------------------
# Conley-Zehnder index
# ----------------------------------------------------------------------------

def _signature(mat) -> int:
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    scale = max(1.0, float(np.max(np.abs(w))))
    return int(np.sum(w > 1e-9 * scale) - np.sum(w < -1e-9 * scale))


def cz_index(path, samples: int = 2000, h: float = 1e-6, tol: float = 1e-7) -> int:
    """Conley-Zehnder index of a symplectic path t -> Phi(t), t in [0, 1], Phi(0) = I.

    Crossing-form method: half the signature of S(0) plus the signatures of
    S(t) restricted to ker(Phi(t) - I) at interior crossings, with
    S = -J0 Phi' Phi^{-1}.
    """
    phi0 = np.asarray(path(0.0), dtype=float)
    d = phi0.shape[0]
    if not np.allclose(phi0, np.eye(d), atol=1e-10):
        raise ContractViolation("path must start at the identity")
    J = complex_structure(d // 2)
    I = np.eye(d)

    def generator(t):
        a, b = max(t - h, 0.0), min(t + h, 1.0)
        dphi = (np.asarray(path(b)) - np.asarray(path(a))) / (b - a)
        return -J @ dphi @ np.linalg.inv(np.asarray(path(t)))

    def smin(t):
        return np.linalg.svd(np.asarray(path(t)) - I, compute_uv=False)[-1]

    if smin(1.0) < 1e-8:
        raise DegeneracyError("Phi(1) has eigenvalue 1")
    total = 0.5 * _signature(generator(0.0))
    ts = np.linspace(0.0, 1.0, samples + 1)
    vals = np.array([smin(t) for t in ts])
    for i in range(1, samples):
        if vals[i] <= vals[i - 1] and vals[i] < vals[i + 1]:
            res = minimize_scalar(smin, bounds=(ts[i - 1], ts[i + 1]), method="bounded",
                                  options={"xatol": 1e-13})
            if res.fun > tol * 10 and vals[i] > 1e-3:
                continue
            tc = float(res.x)
            _, sv, vt = np.linalg.svd(np.asarray(path(tc)) - I)
            kernel = vt[sv < max(1e-5, 10 * res.fun)].T
            if kernel.shape[1] == 0 or res.fun > 1e-5:
                continue
            total += _signature(kernel.T @ generator(tc) @ kernel)
    if abs(total - round(total)) > 1e-9:
        raise DegeneracyError(f"non-integral index {total}")
    return int(round(total))


def cz_grading(path, n: int, **kwargs) -> int:
    """Grading CZ + (n - 3) of an orbit with linearized return path ``path``."""
    return cz_index(path, **kwargs) + (n - 3)


# ----------------------------------------------------------------------------
# Curve tails
# ----------------------------------------------------------------------------

@dataclass
class TailSample:
    """Samples z(s, t) on [s0, s1] x S^1 stored as real arrays of shape (S, T, 2m)."""
    s_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.s_grid.size < 2 or not np.all(np.diff(self.s_grid) > 0):
            raise ContractViolation("s grid must be strictly increasing with at least two points")
        if self.values.shape[:2] != (self.s_grid.size, self.t_grid.size) or self.values.shape[2] % 2:
            raise ContractViolation("values must have shape (S, T, 2m)")

    def sup_norms(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.values, axis=2), axis=1)

    def is_decaying(self) -> bool:
        norms = self.sup_norms()
        return bool(norms[-1] < norms[0])

    def to_document(self) -> dict:
        return {"s_grid": self.s_grid.tolist(), "t_grid": self.t_grid.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_document(cls, doc):
        return cls(doc["s_grid"], doc["t_grid"], doc["values"])


def synth_tail(spec_result: SpectrumResult, coefficients, s_grid, t_grid, noise: float = 0.0,
               rng=None) -> TailSample:
    """Planted tail sum_k c_k exp(lambda_k s) phi_k(t); ``coefficients[k]`` is a
    vector over the k-th eigenspace (a scalar fills its first basis function)."""
    s_grid = np.asarray(s_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    d = 2 * ((spec_result.eigenspaces[0].coefficients.shape[2]) // 2)
    values = np.zeros((s_grid.size, t_grid.size, d))
    for space, c in zip(spec_result.eigenspaces, coefficients):
        c = np.atleast_1d(np.asarray(c, dtype=float))
        c = np.pad(c, (0, space.multiplicity - c.size))
        phi = space.evaluate(t_grid)
        profile = np.einsum("a,atd->td", c, phi)
        values += np.exp(space.value * s_grid)[:, None, None] * profile[None]
    if noise:
        rng = rng or np.random.default_rng(0)
        values += noise * rng.normal(size=values.shape)
    return TailSample(s_grid, t_grid, values)


@dataclass
class TailFit:
    leading_index: int
    coefficients: list  # one vector per eigenspace, starting at index 1
    decay_gap: float
    residual: float
    spectrum: SpectrumResult = field(repr=False, default=None)
    tail: TailSample = field(repr=False, default=None)

    @property
    def leading_coefficient(self) -> float:
        return float(np.linalg.norm(self.coefficients[self.leading_index - 1]))

    def synthesize(self, s_grid=None, t_grid=None) -> TailSample:
        s = self.tail.s_grid if s_grid is None else s_grid
        t = self.tail.t_grid if t_grid is None else t_grid
        return synth_tail(self.spectrum, self.coefficients, s, t)


def fit_tail(tail: TailSample, spec_result: SpectrumResult,
             residual_threshold: float = FIT_RESIDUAL_THRESHOLD) -> TailFit:
    """Least-squares expansion of a tail in exp(lambda_k s) phi_k(t).

    The leading index is the first eigenspace whose coefficient exceeds the
    noise floor relative to the largest coefficient.  The decay gap is the
    measured rate at which the remainder falls below the leading term.
    """
    if not tail.is_decaying():
        raise UnclassifiableError("tail sup-norm does not decay")
    t = tail.t_grid
    columns, slots = [], []
    for k, space in enumerate(spec_result.eigenspaces):
        phi = space.evaluate(t)
        for a in range(space.multiplicity):
            col = np.exp(space.value * tail.s_grid)[:, None, None] * phi[a][None]
            columns.append(col.reshape(-1))
            slots.append((k, a))
    A = np.array(columns).T
    b = tail.values.reshape(-1)
    # weight every s-slice by its own size so the fast-decaying end counts
    slice_norm = np.linalg.norm(tail.values.reshape(tail.s_grid.size, -1), axis=1)
    if np.any(slice_norm == 0):
        raise UnclassifiableError("tail vanishes on a slice")
    row_weight = np.repeat(1.0 / slice_norm, t.size * tail.values.shape[2])
    Aw = A * row_weight[:, None]
    scale = np.linalg.norm(Aw, axis=0)
    coef, *_ = np.linalg.lstsq(Aw / scale, b * row_weight, rcond=None)
    # standard errors of the coefficients: the weighting makes the noise level
    # differ between slices, so estimate it per slice and use the sandwich form
    X = Aw / scale
    per_slice = t.size * tail.values.shape[2]
    dof_factor = Aw.shape[0] / max(Aw.shape[0] - Aw.shape[1], 1)
    resid = (b * row_weight - X @ coef).reshape(tail.s_grid.size, per_slice)
    row_var = np.repeat(dof_factor * np.mean(resid ** 2, axis=1), per_slice)
    bread = np.linalg.pinv(X.T @ X)
    cov = bread @ (X.T * row_var) @ X @ bread
    std_err = np.sqrt(np.maximum(np.diag(cov), 0.0)) / scale
    coef = coef / scale
    fitted = A @ coef
    quarter = tail.s_grid.size * 3 // 4
    diff = (b - fitted).reshape(tail.values.shape)[quarter:]
    ref = tail.values[quarter:]
    residual = float(np.linalg.norm(diff) / max(np.linalg.norm(ref), 1e-300))
    if residual > residual_threshold:
        raise UnclassifiableError(f"fit residual {residual:.3e} above threshold {residual_threshold:.1e}")
    coeffs = [np.zeros(s.multiplicity) for s in spec_result.eigenspaces]
    errors = [np.zeros(s.multiplicity) for s in spec_result.eigenspaces]
    for (k, a), c, e in zip(slots, coef, std_err):
        coeffs[k][a] = c
        errors[k][a] = e
    norms = np.array([np.linalg.norm(c) for c in coeffs])
    noise = np.array([np.linalg.norm(e) for e in errors])
    # a stratum counts when it clears both the relative floor and the measurement noise
    significant = np.where((norms > NOISE_FLOOR * norms.max()) & (norms > SIGNIFICANCE * noise))[0]
    if norms.max() == 0 or significant.size == 0:
        raise UnclassifiableError("all coefficients vanish")
    lead = int(significant[0])
    for k in range(lead):
        coeffs[k] = np.zeros_like(coeffs[k])
    gap = _decay_gap(tail, spec_result, coeffs, lead)
    return TailFit(lead + 1, coeffs, gap, residual, spec_result, tail)


def _decay_gap(tail, spec_result, coeffs, lead) -> float:
    values = spec_result.eigenvalues
    leading = synth_tail(spec_result, [c if k == lead else np.zeros_like(c) for k, c in enumerate(coeffs)],
                         tail.s_grid, tail.t_grid).values
    rem = np.linalg.norm((tail.values - leading).reshape(tail.s_grid.size, -1), axis=1)
    lead_norm = np.linalg.norm(leading.reshape(tail.s_grid.size, -1), axis=1)
    ratio = rem / np.maximum(lead_norm, 1e-300)
    ok = ratio > 1e-12
    if ok.sum() >= 3:
        slope = np.polyfit(tail.s_grid[ok], np.log(ratio[ok]), 1)[0]
        if slope < 0:
            return float(-slope)
    if lead + 1 < values.size:
        return float(values[lead] - values[lead + 1])
    return float(abs(values[lead]))


def _arc_count(mask: np.ndarray) -> int:
    """Number of maximal runs of True on a circle (0 if all False, -1 if all True)."""
    if mask.all():
        return -1
    if not mask.any():
        return 0
    return int(np.sum(mask & ~np.roll(mask, 1)))


def resolvable_band(tail: TailSample, tail_fraction: float = 0.25):
    """Radii (normalized by the slice amplitude) for which arc counts are meaningful."""
    lo, hi = 0.0, math.inf
    for zs in _normalized_slices(tail, tail_fraction):
        dist = np.linalg.norm(zs - zs[0], axis=1)
        step = np.max(np.linalg.norm(np.diff(np.vstack([zs, zs[:1]]), axis=0), axis=1))
        lo = max(lo, 2.0 * step)
        hi = min(hi, float(dist.max()))
    return lo, hi


def _normalized_slices(tail, tail_fraction):
    start = int(tail.s_grid.size * (1 - tail_fraction))
    for i in range(start, tail.s_grid.size):
        z = tail.values[i]
        amp = np.max(np.linalg.norm(z, axis=1))
        if amp == 0:
            raise InconclusiveError("tail vanishes identically on a slice")
        yield z / amp


def count_arcs(tail: TailSample, radius: float, tail_fraction: float = 0.25) -> int:
    """Arcs of {t : |z(s,t) - z(s,0)| < r} on the circles of the tail end.

    Slices are normalized by their largest modulus, so ``radius`` is relative
    to the tail amplitude and ranges over (0, 2).  The count must be the same
    on every slice of the last ``tail_fraction`` of the s-range.
    """
    lo, hi = resolvable_band(tail, tail_fraction)
    if not (lo < radius < hi):
        raise InconclusiveError(f"radius {radius:.4g} outside the resolvable band ({lo:.4g}, {hi:.4g})")
    counts = set()
    for zs in _normalized_slices(tail, tail_fraction):
        counts.add(_arc_count(np.linalg.norm(zs - zs[0], axis=1) < radius))
    if len(counts) != 1:
        raise InconclusiveError(f"arc count not stable over the tail end: {sorted(counts)}")
    count = counts.pop()
    if count <= 0:
        raise InconclusiveError("preimage covers the whole circle")
    return count


def select_radii(fits, floor: float = 0.5, shrink: float = 0.8, max_tries: int = 40) -> list[float]:
    """Radii r_1 < ... < r_m such that every fit with leading index >= j has
    exactly its leading index of arcs at radius r_j.

    Built from the top stratum down: r_m is the midpoint of the common
    resolvable band, and each lower radius starts below the one above and is
    shrunk until all fits of index >= j are in good position.
    """
    if not floor > 0:
        raise NoValidRadiiError("coefficient floor must be positive")
    if not fits:
        raise NoValidRadiiError("empty family")
    for f in fits:
        if f.leading_coefficient < floor:
            raise NoValidRadiiError(
                f"leading coefficient {f.leading_coefficient:.3g} below floor {floor} (index {f.leading_index})")
    top = max(f.leading_index for f in fits)
    radii = [0.0] * top
    upper = math.inf
    for j in range(top, 0, -1):
        members = [f for f in fits if f.leading_index >= j]
        if not members:
            radii[j - 1] = shrink * upper if math.isfinite(upper) else 1.0
            upper = radii[j - 1]
            continue
        bands = [resolvable_band(f.tail) for f in members]
        lo, hi = max(b[0] for b in bands), min(b[1] for b in bands)
        if not lo < hi:
            raise NoValidRadiiError(f"no common resolvable band at stratum {j}")
        r = 0.5 * (lo + hi) if not math.isfinite(upper) else min(0.5 * (lo + hi), shrink * upper)
        for _ in range(max_tries):
            if r <= lo:
                break
            try:
                if all(count_arcs(f.tail, r) == f.leading_index for f in members):
                    break
            except InconclusiveError:
                pass
            r *= shrink
        else:
            raise NoValidRadiiError(f"no good radius found at stratum {j}")
        if r <= lo:
            raise NoValidRadiiError(f"no good radius found at stratum {j}")
        radii[j - 1] = r
        upper = r
    return radii
