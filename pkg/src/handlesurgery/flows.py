"""Reeb and Liouville flows of the model handle and the exact handle passage.

All quantities are in rescaled units unless a name says otherwise.  Besides
the plain flows this module holds :class:`PassageModel`, which describes a
passage through the handle between two points of the gluing sphere by its
y-directions ("bases") and x-directions ("fibers").  Bases and fibers are
unit vectors in weighted coordinates X = sqrt(r) x, Y = sqrt(r) y, where
r = (1, e, ..., e) are the block rates.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import closedform
from .closedform import SQRT2, coth_csch
from .errors import (ContractViolation, DomainError, NoConvergenceError,
                     OutOfChartError, UnboundedFlowError)
from .geometry import SplitPoint, eval_alpha
from .handle import (SURFACE_TOLERANCE, V_MINUS, V_PLUS, HandleParams,
                     defining_value)

DEFAULT_T_MAX = 100.0
PASSAGE_T_MAX = 1e4


@dataclass(frozen=True)
class FlowResult:
    endpoint: SplitPoint
    elapsed: float
    action: float


def reeb_flow_handle(params: HandleParams, point: SplitPoint, t: float) -> SplitPoint:
    """Closed-form re-speeded Reeb flow (cosh/sinh in each coordinate pair)."""
    x, y = closedform.flow_xy(point.x, point.y, params.rates, t)
    return SplitPoint.from_xy(x, y)


def reeb_flow_result(params: HandleParams, point: SplitPoint, t: float) -> FlowResult:
    """Re-speeded flow together with the alpha-integral in unscaled units."""
    end = reeb_flow_handle(params, point, t)
    level = closedform.level_value(point.x, point.y, params.rates)
    action = closedform.respeeded_action(point.x, point.y, end.x, end.y, level, t)
    return FlowResult(end, t, action * params.action_scale)


def liouville_flow(point: SplitPoint, t: float) -> SplitPoint:
    """Liouville flow x -> x e^(2t), y -> y e^(-t)."""
    return SplitPoint.from_xy(point.x * math.exp(2.0 * t), point.y * math.exp(-t))


def weighted_norm2(params: HandleParams, v) -> float:
    return float(np.sum(params.rates * np.asarray(v) ** 2))


def _solve_shifted_cubic(a: float, source: float, target: float) -> float:
    """Root u = E - 1 of 2a(1+u)^3 - target (1+u) - (2a - source) = 0 nearest 0."""
    def f(u):
        return 2 * a * u * (3 + u * (3 + u)) - target * u + (source - target)

    def df(u):
        return 2 * a * (3 + u * (6 + 3 * u)) - target

    if source == target:
        return 0.0
    u = (target - source) / (6 * a - target)
    if not (u > -1):
        u = 1.0
    for _ in range(100):
        step = f(u) / df(u)
        u_new = u - step
        if u_new <= -1:
            u_new = (u - 1) / 2
        if abs(u_new - u) <= 1e-17 * max(abs(u_new), 1e-300):
            u = u_new
            break
        u = u_new
    scale = 2 * a * abs(u) * (3 + abs(u) * (3 + abs(u))) + abs(target * u) + abs(source - target)
    if abs(f(u)) > 1e-14 * scale:
        raise NoConvergenceError(f"cubic residual {abs(f(u)) / scale:.3e} (relative)")
    return u


def flow_time_T(params: HandleParams, point: SplitPoint, source: int = -1, target: int = 1,
                band: tuple[float, float] | None = None) -> float:
    """Liouville time carrying ``point`` from the surface ``source`` to ``target``.

    Depends only on a = |x|_w^2.  The default band for a is [rho^2/4, 4 rho^2]
    around the gluing radius rho; pass ``band=(lo, hi)`` to widen it.
    """
    value = defining_value(params, V_PLUS if source == 1 else V_MINUS, point)
    # relative to the size of the terms: far out they are ~rho^2 and cancel
    magnitude = 1.0 + float(np.sum(params.rates * (2.0 * point.x ** 2 + point.y ** 2)))
    if abs(value) > SURFACE_TOLERANCE * magnitude:
        raise DomainError(f"point is off the source surface by {value:.3e}")
    a = weighted_norm2(params, point.x)
    if band is None:
        rho = gluing_data(params).rho
        band = (rho * rho / 4, 4 * rho * rho)
    if not (band[0] <= a <= band[1]) or a <= 0:
        raise DomainError(f"|x|_w^2 = {a:.6g} outside the admissible band {band}")
    return 0.5 * math.log1p(_solve_shifted_cubic(a, float(source), float(target)))


@dataclass(frozen=True)
class GluingData:
    """Radii of the gluing sphere and of its image on the upper surface.

    ``rho`` is |x|_w on the lower surface, ``lower_y`` is |y|_w there, ``T`` the
    Liouville time to the upper surface, and ``r_x``, ``r_y`` the radii of the
    product S_x(r_x) x S_y(r_y) it lands on.
    """
    rho: float
    lower_y: float
    T: float
    r_x: float
    r_y: float


@functools.lru_cache(maxsize=256)
def gluing_data(params: HandleParams) -> GluingData:
    eps = params.epsilon
    rho = (eps ** (params.s + 1) / SQRT2 - 10 * eps ** params.l) / eps ** params.p
    if not rho > 0:
        raise DomainError(f"gluing radius is not positive at epsilon={eps}: rho={rho:.3e}")
    u = _solve_shifted_cubic(rho * rho, -1.0, 1.0)
    T = 0.5 * math.log1p(u)
    r_x = rho * math.exp(2 * T)
    r_y = math.sqrt(2 * r_x * r_x - 1)
    return GluingData(rho, math.sqrt(2 * rho * rho + 1), T, r_x, r_y)


def _y_radius2_on_flow(params, x, y, t):
    xt, yt = closedform.flow_xy(x, y, params.rates, t)
    return weighted_norm2(params, yt)


def exit_time_tau(params: HandleParams, entry: SplitPoint, radius: float | None = None,
                  t_max: float = DEFAULT_T_MAX) -> float:
    """Time the re-speeded flow from ``entry`` stays inside |y|_w <= radius.

    ``radius`` defaults to |y|_w at the entry point.  The flow enters the
    disk iff sum r_i^2 x_i y_i < 0; otherwise 0 is returned.  The exit time is
    bracketed on a logarithmic grid and refined with Brent's method.
    """
    x, y = entry.x, entry.y
    r = params.rates
    r0 = math.sqrt(weighted_norm2(params, y))
    if radius is None:
        radius = r0
    elif abs(r0 - radius) > SURFACE_TOLERANCE * max(1.0, radius):
        raise ContractViolation(f"entry |y|_w = {r0:.12g} differs from the radius {radius:.12g}")
    if float(np.sum(r * r * x * y)) >= 0.0:
        return 0.0
    target = radius * radius

    def g(t):
        return _y_radius2_on_flow(params, x, y, t) / target - 1.0

    grid = np.geomspace(1e-9, t_max, 400)
    seen_inside = False
    prev = 0.0
    for t in grid:
        val = g(t)
        if val < 0:
            seen_inside = True
        elif seen_inside:
            return brentq(g, prev, t, xtol=1e-15, rtol=1e-15, maxiter=300)
        prev = t
    raise UnboundedFlowError(f"no exit from the y-disk before t_max={t_max}")


def action_along_path(samples, params: HandleParams | None = None) -> float:
    """Line integral of alpha along a polyline through ``samples``.

    Trapezoid rule on the full and on the every-other-sample path, combined by
    Richardson extrapolation when the sample count allows it.  The value is in
    rescaled units unless ``params`` is given, in which case it is converted to
    unscaled units.
    """
    pts = [np.asarray(p.as_array()) for p in samples]
    if len(pts) < 2:
        raise ContractViolation("need at least two samples")

    def trapezoid(points):
        total = 0.0
        for a, b in zip(points[:-1], points[1:]):
            pa, pb = SplitPoint.from_array(a), SplitPoint.from_array(b)
            d = SplitPoint.from_array(b - a)
            total += 0.5 * (eval_alpha(pa, d) + eval_alpha(pb, d))
        return total

    fine = trapezoid(pts)
    if len(pts) >= 3 and (len(pts) - 1) % 2 == 0:
        coarse = trapezoid(pts[::2])
        value = (4.0 * fine - coarse) / 3.0
    else:
        value = fine
    if params is not None:
        value *= params.action_scale
    return value


# ----------------------------------------------------------------------------
# Exact passage model
# ----------------------------------------------------------------------------

def orthonormal_complement(v) -> np.ndarray:
    """Columns spanning v-perp, from QR of [v, e_2, ..., e_n] (smooth near +-e_1)."""
    v = np.asarray(v, dtype=float)
    n = v.size
    m = np.eye(n)
    m[:, 0] = v / np.linalg.norm(v)
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    return q[:, 1:]


@dataclass(frozen=True)
class Passage:
    """Solution of a passage through the handle between two gluing-sphere bases.

    ``fiber`` is the entry x-direction; ``tau`` the re-speeded passage time;
    ``entry_uw`` and ``exit_uw`` hold the eigen-coordinates (U, W) of the
    entry and exit points on the upper surface.
    """
    fiber: np.ndarray
    tau: float
    entry_uw: tuple
    exit_uw: tuple


class PassageModel:
    """Exact handle passages for one parameter tuple (all closed forms plus 1-D roots)."""

    def __init__(self, params: HandleParams):
        self.params = params
        self.glue = gluing_data(params)
        self.rates = params.rates
        self.lam = SQRT2 * self.rates
        self.sqrt_rates = np.sqrt(self.rates)
        self.n = params.n

    # -- crossing of the core with the gluing sphere --------------------------

    def crossing(self, zeta) -> np.ndarray:
        """y-direction where the flow line through the core point ``zeta`` meets |x|_w = rho."""
        zeta = np.asarray(zeta, dtype=float)
        zeta = zeta / np.linalg.norm(zeta)
        t = self._crossing_time(zeta)
        y = np.cosh(self.lam * t) * zeta
        return y / np.linalg.norm(y)

    def _crossing_time(self, zeta):
        target = 2.0 * self.glue.rho ** 2

        def g(t):
            return float(np.sum((np.sinh(self.lam * t) * zeta) ** 2)) - target

        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise DomainError("core point does not reach the gluing sphere")
        return brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=300)

    def core_of_base(self, base) -> np.ndarray:
        """Inverse of :meth:`crossing`."""
        base = np.asarray(base, dtype=float)
        base = base / np.linalg.norm(base)
        target = 2.0 * self.glue.rho ** 2

        def zeta_at(t):
            z = base / np.cosh(self.lam * t)
            return z / np.linalg.norm(z)

        def g(t):
            return float(np.sum((np.sinh(self.lam * t) * zeta_at(t)) ** 2)) - target

        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e6:
                raise DomainError("base does not come from a core point")
        t = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
        return zeta_at(t)

    # -- hemisphere charts -----------------------------------------------------

    def inward_normal(self, base) -> np.ndarray:
        """Fibers xi with xi . m < 0 enter the y-disk (d|Y|^2/dt ~ sum r X Y)."""
        m = self.rates * np.asarray(base, dtype=float)
        return m / np.linalg.norm(m)

    def chart(self, base, fiber) -> np.ndarray:
        """Orthographic coordinates of an inward fiber (open unit ball in R^(n-1))."""
        m = self.inward_normal(base)
        fiber = np.asarray(fiber, dtype=float)
        if fiber @ m >= 0.0:
            raise OutOfChartError("fiber is not in the inward hemisphere")
        return orthonormal_complement(m).T @ fiber

    def unchart(self, base, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        r2 = float(eta @ eta)
        if not r2 < 1.0:
            raise OutOfChartError(f"hemisphere coordinate has norm {math.sqrt(r2):.6g} >= 1")
        m = self.inward_normal(base)
        return orthonormal_complement(m) @ eta - math.sqrt(1.0 - r2) * m

    # -- passages --------------------------------------------------------------

    def passage_preimage(self, base_in, base_out) -> Passage:
        """Entry fiber whose passage from ``base_in`` exits at ``base_out``."""
        g = self.glue
        y0 = np.asarray(base_in, dtype=float) * g.r_y
        y1 = np.asarray(base_out, dtype=float) * g.r_y
        lam = self.lam

        def fiber_x(t):
            ct, cs = coth_csch(lam * t)
            return (y1 * cs - y0 * ct) / SQRT2

        def h(t):
            ct, cs = coth_csch(lam * t)
            # |X0|^2 = r_x^2 reduces to this form since 2 r_x^2 - r_y^2 = 1
            return float(np.sum(cs * cs * (y0 * y0 + y1 * y1) - 2.0 * y0 * y1 * cs * ct)) - 1.0

        lo, hi = 1e-9, 1.0
        if h(lo) <= 0:
            raise DomainError("passage preimage does not exist for these bases")
        while h(hi) > 0:
            lo = hi
            hi *= 2.0
            if hi > PASSAGE_T_MAX:
                raise UnboundedFlowError("passage time exceeds the search bound")
        tau = brentq(h, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
        x0 = fiber_x(tau)
        ct, cs = coth_csch(lam * tau)
        cm1 = 2.0 * np.exp(-2.0 * lam * tau) / -np.expm1(-2.0 * lam * tau)
        entry_u = y1 * cs - y0 * cm1
        entry_w = y1 * cs - y0 * (ct + 1.0)
        exit_u = y1 * (ct + 1.0) - y0 * cs
        exit_w = y1 * cm1 - y0 * cs
        return Passage(x0 / np.linalg.norm(x0), tau, (entry_u, entry_w), (exit_u, exit_w))

    def launch(self, base_out) -> Passage:
        """Passage from the co-core sphere (y = 0, 2|x|_w^2 = 1) exiting at ``base_out``."""
        y1 = np.asarray(base_out, dtype=float) * self.glue.r_y
        lam = self.lam

        def h(t):
            _, cs = coth_csch(lam * t)
            return float(np.sum((y1 * cs) ** 2)) - 1.0

        tau = self._bracket_decreasing(h)
        ct, cs = coth_csch(lam * tau)
        x_gamma = y1 * cs / SQRT2
        cm1 = 2.0 * np.exp(-2.0 * lam * tau) / -np.expm1(-2.0 * lam * tau)
        exit_u = y1 * (ct + 1.0)
        exit_w = y1 * cm1
        return Passage(x_gamma / np.linalg.norm(x_gamma), tau,
                       (SQRT2 * x_gamma, SQRT2 * x_gamma), (exit_u, exit_w))

    def landing(self, base_in) -> Passage:
        """Passage entering at ``base_in`` and ending on the co-core sphere."""
        y0 = np.asarray(base_in, dtype=float) * self.glue.r_y
        lam = self.lam

        def h(t):
            # |X0|^2 = r_x^2 with X0 = -Y0 coth / sqrt2, rewritten with coth^2 = 1 + csch^2
            _, cs = coth_csch(lam * t)
            return float(np.sum((y0 * cs) ** 2)) - 1.0

        tau = self._bracket_decreasing(h)
        ct, cs = coth_csch(lam * tau)
        x0 = -y0 * ct / SQRT2
        cm1 = 2.0 * np.exp(-2.0 * lam * tau) / -np.expm1(-2.0 * lam * tau)
        entry_u = -y0 * cm1
        entry_w = -y0 * (ct + 1.0)
        x_gamma = -y0 * cs / SQRT2
        return Passage(x0 / np.linalg.norm(x0), tau, (entry_u, entry_w),
                       (SQRT2 * x_gamma, SQRT2 * x_gamma))

    @staticmethod
    def _bracket_decreasing(h):
        lo, hi = 1e-9, 1.0
        if h(lo) <= 0:
            raise DomainError("no passage time: function already nonpositive")
        while h(hi) > 0:
            lo = hi
            hi *= 2.0
            if hi > PASSAGE_T_MAX:
                raise UnboundedFlowError("passage time exceeds the search bound")
        return brentq(h, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)

    def forward(self, base_in, fiber, t_max: float = PASSAGE_T_MAX) -> Passage:
        """Forward passage from an inward entry (eigen-coordinates; accurate for shallow passages)."""
        g = self.glue
        fiber = np.asarray(fiber, dtype=float)
        base_in = np.asarray(base_in, dtype=float)
        if fiber @ self.inward_normal(base_in) >= 0:
            raise OutOfChartError("entry fiber is not inward")
        x0 = g.r_x * fiber
        y0 = g.r_y * base_in
        u0 = SQRT2 * x0 + y0
        w0 = SQRT2 * x0 - y0
        lam = self.lam

        def h(t):
            with np.errstate(over="ignore", invalid="ignore"):
                y = (np.where(u0 == 0, 0.0, u0 * np.exp(lam * t)) - w0 * np.exp(-lam * t)) / 2.0
                value = float(y @ y) / g.r_y ** 2 - 1.0
            return value if math.isfinite(value) else math.inf

        grid = np.geomspace(1e-9, t_max, 600)
        seen_inside, prev, tau = False, 0.0, None
        for t in grid:
            val = h(t)
            if val < 0:
                seen_inside = True
            elif seen_inside:
                tau = brentq(h, prev, t, xtol=1e-15, rtol=1e-15, maxiter=300)
                break
            prev = t
        if tau is None:
            raise UnboundedFlowError("forward passage did not exit")
        return Passage(fiber, tau, (u0, w0), (u0 * np.exp(lam * tau), w0 * np.exp(-lam * tau)))

    # -- action bookkeeping ----------------------------------------------------

    def lower_uw(self, uw):
        """Eigen-coordinates after the Liouville map from the upper surface to the gluing sphere."""
        u, w = uw
        T = self.glue.T
        a = math.exp(-2 * T)
        b = math.exp(T)
        return (u * (a + b) + w * (a - b)) / 2.0, (u * (a - b) + w * (a + b)) / 2.0

    def time_to_section(self, uw) -> float:
        """Signed re-speeded time on the lower surface to reach x.y = 0 (unweighted)."""
        u, w = uw
        lam = self.lam
        with np.errstate(divide="ignore"):
            lu = np.log(u * u / self.rates)
            lw = np.log(w * w / self.rates)

        def f(t):
            return logsumexp(lu + 2 * lam * t) - logsumexp(lw - 2 * lam * t)

        lo, hi = -1.0, 1.0
        while f(lo) > 0:
            lo *= 2
            if lo < -1e7:
                raise DomainError("section not reached backwards")
        while f(hi) < 0:
            hi *= 2
            if hi > 1e7:
                raise DomainError("section not reached forwards")
        return brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=300)

    def handle_time_weight(self) -> float:
        return math.exp(-self.glue.T)

    def passage_deviation(self, passage: Passage, entry_from_lambda=True, exit_to_lambda=True) -> float:
        """Rescaled action gained over the old chord pieces for one handle visit.

        The old pieces run between the section x.y = 0 and the gluing sphere;
        the passage adds half the normalized handle time and half the signed
        lower-surface times to the section.
        """
        total = self.handle_time_weight() * passage.tau
        if entry_from_lambda:
            total += self.time_to_section(self.lower_uw(passage.entry_uw))
        if exit_to_lambda:
            total -= self.time_to_section(self.lower_uw(passage.exit_uw))
        return 0.5 * total

    def passage_handle_action(self, passage: Passage) -> float:
        """Rescaled alpha-integral of the handle segment in the glued normalization."""
        xe, ye = _uw_to_xy(passage.entry_uw, self.sqrt_rates)
        xo, yo = _uw_to_xy(passage.exit_uw, self.sqrt_rates)
        raw = closedform.respeeded_action(xe, ye, xo, yo, 1.0, passage.tau)
        return self.handle_time_weight() * raw


def _uw_to_xy(uw, sqrt_rates):
    """Unweighted (x, y) from weighted eigen-coordinates."""
    u, w = uw
    return (u + w) / (2 * SQRT2) / sqrt_rates, (u - w) / 2.0 / sqrt_rates


def uw_to_point(uw, params: HandleParams) -> SplitPoint:
    x, y = _uw_to_xy(uw, np.sqrt(params.rates))
    return SplitPoint.from_xy(x, y)


@dataclass(frozen=True)
class HandleMapResult:
    exit_base: np.ndarray
    exit_fiber: np.ndarray
    tau: float
    action: float


def through_handle_map(params: HandleParams, base, fiber, backwards: bool = False) -> HandleMapResult:
    """Passage through the handle from the gluing-sphere point with y-direction
    ``base`` and x-direction ``fiber`` (Liouville up, Reeb flow, Liouville down).

    Directions are weighted unit vectors.  The Liouville steps preserve
    directions, so the exit is reported by its direction pair as well.  The
    action is the alpha-integral of the handle segment in unscaled units.
    With ``backwards`` the flow is reversed via (x, y) -> (-x, y).
    """
    model = PassageModel(params)
    base = np.asarray(base, dtype=float)
    fiber = np.asarray(fiber, dtype=float)
    if backwards:
        res = through_handle_map(params, base, -fiber)
        return HandleMapResult(res.exit_base, -res.exit_fiber, res.tau, res.action)
    passage = model.forward(base, fiber)
    u1, w1 = passage.exit_uw
    x1 = (u1 + w1) / (2 * SQRT2)
    y1 = (u1 - w1) / 2.0
    action = model.passage_handle_action(passage) * params.action_scale
    return HandleMapResult(y1 / np.linalg.norm(y1), x1 / np.linalg.norm(x1), passage.tau, action)


def endpoint_core(kind: str, ordinal: int, n: int) -> np.ndarray:
    """Deterministic core position of a chord endpoint.

    Chord ends ("end") sit in the hemisphere zeta_1 > 0 and chord starts
    ("start") in zeta_1 < 0.  The first endpoint of each kind on a component
    sits exactly at the pole; later ones are offset by a low-discrepancy
    sequence of norm at most 0.5.
    """
    sign = {"end": 1.0, "start": -1.0}[kind]
    offset = np.zeros(n - 1)
    if ordinal > 0:
        offset = 0.9 * (_halton(ordinal, n - 1) - 0.5)
        norm = np.linalg.norm(offset)
        if norm > 0.5:
            offset *= 0.5 / norm
    v = np.concatenate(([sign], offset))
    return v / np.linalg.norm(v)


def _halton(index: int, dim: int) -> np.ndarray:
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
    out = np.empty(dim)
    for d in range(dim):
        base = primes[d % len(primes)]
        f, r, i = 1.0, 0.0, index
        while i > 0:
            f /= base
            r += f * (i % base)
            i //= base
        out[d] = r
    return out
