"""The model handle in rescaled units.

Coordinates are divided by ``epsilon**p`` so that the two hypersurfaces read
``2 x1^2 - y1^2 + e (2|x2|^2 - |y2|^2) = +-1`` with ``e = epsilon**(2 s)``.
Unscaled quantities are recovered by multiplying lengths by ``epsilon**p``
and actions by ``epsilon**(2 p)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import closedform
from .errors import (ContractViolation, InvalidParams, NoConvergenceError,
                     NotOnSectionError, OffSurfaceError)
from .geometry import SplitPoint, TangentVec

SURFACE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class HandleParams:
    epsilon: float = 0.5
    p: float = 22
    s: float = 3
    q: float = 20
    l: float = 21
    n: int = 3
    validate: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidParams(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParams(f"n must be an integer >= 2, got {self.n}")
        if min(self.p, self.s, self.q, self.l) <= 0:
            raise InvalidParams("exponents p, s, q, l must be positive")
        if self.validate:
            problems = self.violations()
            if problems:
                raise InvalidParams("; ".join(problems))

    def violations(self) -> list[str]:
        """Human-readable list of the broken exponent inequalities (empty if valid)."""
        p, s, q, l = self.p, self.s, self.q, self.l
        out = []
        if not (p / 10 < s < p / 5):
            out.append(f"need p/10 < s < p/5, got s={s}, p={p}")
        if not (5 * s + 5 < l < p):
            out.append(f"need 5s+5 < l < p, got l={l}")
        if not (p - s < q < p):
            out.append(f"need p-s < q < p, got q={q}")
        return out

    def with_epsilon(self, epsilon: float) -> "HandleParams":
        return replace(self, epsilon=epsilon)

    @property
    def weight(self) -> float:
        """Coefficient e = epsilon^(2s) of the second coordinate block."""
        return self.epsilon ** (2 * self.s)

    @property
    def rates(self) -> np.ndarray:
        r = np.full(self.n, self.weight)
        r[0] = 1.0
        return r

    @property
    def length_scale(self) -> float:
        return self.epsilon ** self.p

    @property
    def action_scale(self) -> float:
        return self.epsilon ** (2 * self.p)

    @property
    def tube_radius(self) -> float:
        """Rescaled radius epsilon^(s+1) of the handle tube in the y-directions."""
        return self.epsilon ** (self.s + 1 - self.p)

    @property
    def flat_radius(self) -> float:
        """Rescaled radius epsilon^q below which the flattened surfaces are products."""
        return self.epsilon ** (self.q - self.p)


@dataclass(frozen=True)
class SurfaceId:
    sign: int
    flattened: bool = False

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ContractViolation(f"surface sign must be +1 or -1, got {self.sign}")


V_PLUS = SurfaceId(1)
V_MINUS = SurfaceId(-1)
V_PLUS_FLAT = SurfaceId(1, True)
V_MINUS_FLAT = SurfaceId(-1, True)


def _check_dim(params: HandleParams, point: SplitPoint):
    if point.n != params.n:
        raise ContractViolation(f"point has dimension {point.n}, handle has n={params.n}")


def cutoff_beta(params: HandleParams, r: float) -> float:
    """Quintic smoothstep from 0 at r <= epsilon^q to 1 at r >= 2 epsilon^q (rescaled r)."""
    if r < 0:
        raise ContractViolation("radius must be nonnegative")
    u = min(max((r - params.flat_radius) / params.flat_radius, 0.0), 1.0)
    return u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)


def cutoff_beta_derivative(params: HandleParams, r: float) -> float:
    r0 = params.flat_radius
    u = (r - r0) / r0
    if u <= 0.0 or u >= 1.0:
        return 0.0
    return 30.0 * u * u * (1.0 - u) ** 2 / r0


def _block_weight(params, surface, point):
    """Weight w(r2) multiplying the second block and its radial derivative."""
    if not surface.flattened:
        return 1.0, 0.0, 0.0
    r2 = math.hypot(float(np.linalg.norm(point.x2)), float(np.linalg.norm(point.y2)))
    return cutoff_beta(params, r2), cutoff_beta_derivative(params, r2), r2


def defining_value(params: HandleParams, surface: SurfaceId, point: SplitPoint) -> float:
    """Defining function of the (flattened) hypersurface; zero exactly on it."""
    _check_dim(params, point)
    w, _, _ = _block_weight(params, surface, point)
    block1 = 2.0 * point.x1 ** 2 - point.y1 ** 2
    block2 = 2.0 * float(point.x2 @ point.x2) - float(point.y2 @ point.y2)
    return block1 + w * params.weight * block2 - surface.sign


def defining_gradient(params: HandleParams, surface: SurfaceId, point: SplitPoint) -> TangentVec:
    """Euclidean gradient of the defining function, as (d/dx, d/dy) components."""
    _check_dim(params, point)
    w, dw, r2 = _block_weight(params, surface, point)
    e = params.weight
    block2 = 2.0 * float(point.x2 @ point.x2) - float(point.y2 @ point.y2)
    gx2 = w * e * 4.0 * point.x2
    gy2 = -w * e * 2.0 * point.y2
    if dw != 0.0:
        gx2 = gx2 + dw * e * block2 * point.x2 / r2
        gy2 = gy2 + dw * e * block2 * point.y2 / r2
    return TangentVec(4.0 * point.x1, -2.0 * point.y1, gx2, gy2)


normal_field = defining_gradient


def liouville_field(point: SplitPoint) -> TangentVec:
    """Liouville field 2x.d/dx - y.d/dy."""
    return TangentVec(2.0 * point.x1, -point.y1, 2.0 * point.x2, -point.y2)


def reeb_field(params: HandleParams, surface: SurfaceId, point: SplitPoint) -> TangentVec:
    """Reeb field of alpha restricted to the surface through ``point``.

    It is the Hamiltonian field of the defining function divided by its alpha
    value; on the unflattened surfaces this is
    N (2x.d/dy + y.d/dx) with block-2 terms weighted by epsilon^(2s).
    """
    value = defining_value(params, surface, point)
    if abs(value) > SURFACE_TOLERANCE:
        raise OffSurfaceError(f"point is off the surface by {value:.3e}", residual=value)
    g = defining_gradient(params, surface, point)
    ham = TangentVec.from_xy(-g.y, g.x)
    norm = 2.0 * float(point.x @ ham.y) + float(point.y @ ham.x)
    return ham * (1.0 / norm)


def _liouville_image(point: SplitPoint, t: float) -> SplitPoint:
    return SplitPoint.from_xy(point.x * math.exp(2.0 * t), point.y * math.exp(-t))


def project_to_surface(params: HandleParams, surface: SurfaceId, point: SplitPoint,
                       capture_radius: float = 1.0, max_iter: int = 50) -> SplitPoint:
    """Slide ``point`` along its Liouville trajectory onto the surface (Newton in flow time)."""
    value = defining_value(params, surface, point)
    if abs(value) > capture_radius:
        raise ContractViolation(f"defining value {value:.3e} exceeds capture radius {capture_radius}")
    if abs(value) <= 1e-12:
        return point
    t = 0.0
    current = point
    for _ in range(max_iter):
        value = defining_value(params, surface, current)
        if abs(value) <= 1e-12:
            return current
        slope = float(defining_gradient(params, surface, current).as_array()
                      @ liouville_field(current).as_array())
        if slope <= 0.0:
            raise NoConvergenceError("Liouville field is not transverse at the iterate")
        t -= value / slope
        current = _liouville_image(point, t)
    value = defining_value(params, surface, current)
    if abs(value) <= 1e-12:
        return current
    raise NoConvergenceError(f"projection did not converge, residual {value:.3e}")


def _check_on_section(params: HandleParams, point: SplitPoint):
    _check_dim(params, point)
    value = defining_value(params, V_MINUS, point)
    if abs(value) > SURFACE_TOLERANCE:
        raise OffSurfaceError(f"point is off the lower surface by {value:.3e}", residual=value)
    dot = float(point.x @ point.y)
    if abs(dot) > SURFACE_TOLERANCE:
        raise NotOnSectionError(f"x.y = {dot:.3e} is not zero")


def chart_psi(params: HandleParams, point: SplitPoint):
    """Map a point of the section {x.y = 0} of the lower surface to (q, p, z) = (y/|y|, -|y| x, 0)."""
    _check_on_section(params, point)
    y = point.y
    ny = float(np.linalg.norm(y))
    return y / ny, -ny * point.x, 0.0


def unit_speed_flow(params: HandleParams, surface: SurfaceId, point: SplitPoint, t: float) -> SplitPoint:
    """Reeb flow of alpha-time ``t`` on an unflattened surface (closed form plus a 1-D root)."""
    rates = params.rates
    level = closedform.level_value(point.x, point.y, rates)
    tau = closedform.respeeded_time_for_action(point.x, point.y, rates, t, level)
    x, y = closedform.flow_xy(point.x, point.y, rates, tau)
    return SplitPoint.from_xy(x, y)


def embed_Psi(params: HandleParams, point: SplitPoint, t: float):
    """Chart of the neighborhood of the section: the image of the section point
    flowed for Reeb time ``t`` is sent to (psi(point), t)."""
    if not abs(t) < 1.0:
        raise ContractViolation(f"flow time must satisfy |t| < 1, got {t}")
    q, p, _ = chart_psi(params, point)
    return q, p, float(t)


def section_point(params: HandleParams, base, fiber, fiber_radius: float) -> SplitPoint:
    """Point of the section {x.y = 0} on the lower surface with y-direction ``base``.

    ``fiber`` is orthogonalized against ``base`` and scaled to Euclidean length
    ``fiber_radius``; |y| is then fixed by the defining equation.
    """
    base = np.asarray(base, dtype=float)
    base = base / np.linalg.norm(base)
    fiber = np.asarray(fiber, dtype=float)
    fiber = fiber - (fiber @ base) * base
    nf = np.linalg.norm(fiber)
    x = fiber * (fiber_radius / nf) if nf > 0 else np.zeros_like(base)
    rates = params.rates
    # sum r (2x^2 - y^2) = -1 with y = c * base
    c2 = (1.0 + 2.0 * float(np.sum(rates * x * x))) / float(np.sum(rates * base * base))
    return SplitPoint.from_xy(x, math.sqrt(c2) * base)


def psi_z_extent(params: HandleParams, directions: int = 64, seed: int = 0) -> float:
    """Largest Reeb time (unscaled units) between the section {x.y = 0} and the
    boundary |x|_w = rho of the lower neighborhood, maximized over core directions.

    The core directions include the coordinate axes and ``directions`` random
    unit vectors; along each one the flow line through the core point is
    followed forward until it meets the boundary.
    """
    from .flows import gluing_data

    rho = gluing_data(params).rho
    rng = np.random.default_rng(seed)
    dirs = list(np.eye(params.n)) + list(rng.normal(size=(directions, params.n)))
    sw = np.sqrt(params.rates)
    best = 0.0
    for d in dirs:
        zeta = d / np.linalg.norm(d)
        y_core = zeta / sw
        lam = closedform.SQRT2 * params.rates
        active = zeta != 0.0
        g = lambda t: float(np.sum((np.sinh(lam[active] * t) * zeta[active]) ** 2)) / 2.0 - rho ** 2
        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
        t = brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-15)
        x1, y1 = closedform.flow_xy(np.zeros(params.n), y_core, params.rates, t)
        action = closedform.respeeded_action(np.zeros(params.n), y_core, x1, y1, -1.0, t)
        best = max(best, action)
    return best * params.action_scale
