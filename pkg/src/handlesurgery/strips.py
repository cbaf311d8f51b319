"""Explicit basic strips in the (x1, y1)-plane of the handle model.

All lengths are in rescaled units (unscaled length = epsilon^p times rescaled);
areas and actions are reported in both rescaled and unscaled units.  The strip
lies between the hyperbola branches ``2x^2 - y^2 = 1`` (positive branch) and
``2x^2 - y^2 = -1`` (negative branch), is bounded by the co-core plane
``{y = 0}`` and the core plane ``{x = 0}``, and is truncated at
``x = truncation`` where a vertical cap closes it.  The two-corner variant uses
the first and third quadrants, the one-corner variant only the first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ContractViolation, OutOfChartError, ResolutionError
from .handle import HandleParams

VARIANTS = ("two-corner", "one-corner")
BRANCH_VERTEX = 1.0 / math.sqrt(2.0)
MONOTONICITY_SEPARATION = 4.0
HOLOMORPHIC_TOLERANCE = 1e-10


def default_truncation(params: HandleParams) -> float:
    """Rescaled x-extent of the strip: the outer edge of the attaching band."""
    return params.epsilon ** (params.s - params.p)


@dataclass
class StripRegion:
    """Sampled strip.

    ``quadrants`` holds one (nx, ny, 2) grid of (x1, y1) samples per quadrant.
    ``boundary`` is the ordered list of (label, samples) boundary pieces with
    labels ``C`` (co-core plane), ``L`` (core plane), ``V+``, ``V-`` (hyperbola
    branches) and ``cap``; a ``corner`` entry marks each pass through the origin.
    ``tilt`` and ``shift_x2`` deform the embedding into C^n for negative controls.
    """
    variant: str
    params: HandleParams
    truncation: float
    quadrants: list
    boundary: list
    tilt: float = 0.0
    shift_x2: float = 0.0

    @property
    def corners(self) -> int:
        return sum(1 for label, _ in self.boundary if label == "corner")

    def embedded(self) -> list[np.ndarray]:
        """Grids in R^(2n), layout (x1..xn, y1..yn)."""
        n = self.params.n
        out = []
        for grid in self.quadrants:
            pts = np.zeros(grid.shape[:2] + (2 * n,))
            pts[..., 0] = grid[..., 0] * math.cos(self.tilt)
            pts[..., 1] = grid[..., 0] * math.sin(self.tilt) + self.shift_x2
            pts[..., n] = grid[..., 1]
            out.append(pts)
        return out

    def transformed(self, tilt: float = 0.0, shift_x2: float = 0.0) -> "StripRegion":
        return replace(self, tilt=tilt, shift_x2=shift_x2)

    def to_document(self) -> dict:
        return {
            "variant": self.variant,
            "truncation": self.truncation,
            "corners": self.corners,
            "quadrants": [g.tolist() for g in self.quadrants],
            "boundary": [{"label": lab, "samples": np.asarray(pts).tolist()} for lab, pts in self.boundary],
        }


def _x_nodes(truncation: float, count: int) -> np.ndarray:
    inner = np.linspace(0.0, BRANCH_VERTEX, count // 3, endpoint=False)
    theta = np.linspace(0.0, math.acosh(math.sqrt(2.0) * truncation), count - inner.size)
    return np.concatenate([inner, np.cosh(theta) / math.sqrt(2.0)])


def _branch_bounds(x):
    lower = np.sqrt(np.maximum(2 * x * x - 1.0, 0.0))
    upper = np.sqrt(2 * x * x + 1.0)
    return lower, upper


def build_strip(params: HandleParams, variant: str = "two-corner", truncation: float | None = None,
                nx: int = 90, ny: int = 12) -> StripRegion:
    if variant not in VARIANTS:
        raise ContractViolation(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    X = default_truncation(params) if truncation is None else float(truncation)
    if X <= BRANCH_VERTEX:
        raise ContractViolation("truncation must exceed the branch vertex 1/sqrt(2)")
    x = _x_nodes(X, nx)
    lo, width = _strip_lower(x), _strip_width(x)
    v = np.linspace(0.0, 1.0, ny)
    grid = np.stack(np.broadcast_arrays(x[:, None], lo[:, None] + v[None, :] * width[:, None]), axis=-1)
    grids = [grid]
    theta_plus = np.linspace(0.0, math.acosh(math.sqrt(2.0) * X), 64)
    theta_minus = np.linspace(0.0, math.asinh(math.sqrt(2.0) * X), 64)
    ylo_X, yhi_X = _branch_bounds(np.array([X]))

    def pieces(sign):
        c_axis = np.stack([np.linspace(0.0, BRANCH_VERTEX, 16), np.zeros(16)], axis=1)
        v_plus = np.stack([np.cosh(theta_plus) / math.sqrt(2.0), np.sinh(theta_plus)], axis=1)
        cap = np.stack([np.full(16, X), np.linspace(ylo_X[0], yhi_X[0], 16)], axis=1)
        v_minus = np.stack([np.sinh(theta_minus) / math.sqrt(2.0), np.cosh(theta_minus)], axis=1)[::-1]
        l_axis = np.stack([np.zeros(16), np.linspace(1.0, 0.0, 16)], axis=1)
        return [("C", sign * c_axis), ("V+", sign * v_plus), ("cap", sign * cap),
                ("V-", sign * v_minus), ("L", sign * l_axis), ("corner", np.zeros((1, 2)))]

    boundary = pieces(1.0)
    if variant == "two-corner":
        grids.append(-grid)
        boundary += pieces(-1.0)
    return StripRegion(variant, params, X, grids, boundary)


def holomorphicity_residual(params: HandleParams, strip: StripRegion) -> float:
    """Largest distance from J(e1) to the tangent plane over the grid, where
    (e1, e2) is an orthonormal tangent frame and J is the standard structure
    (J d/dx_k = d/dy_k), which agrees with the model structure on this plane.
    """
    n = params.n
    flat = params.flat_radius
    if abs(strip.shift_x2) > flat:
        raise OutOfChartError(f"x2 offset {strip.shift_x2:.3g} leaves the model window of radius {flat:.3g}")
    J = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    worst = 0.0
    for pts in strip.embedded():
        du = np.gradient(pts, axis=0)
        dv = np.gradient(pts, axis=1)
        for a, b in zip(du.reshape(-1, 2 * n), dv.reshape(-1, 2 * n)):
            q, r = np.linalg.qr(np.stack([a, b], axis=1))
            if abs(r[1, 1]) < 1e-12 * abs(r[0, 0]):
                continue
            Je = J @ q
            resid = Je - q @ (q.T @ Je)
            worst = max(worst, float(np.max(np.linalg.norm(resid, axis=0))))
    return worst


def _gauss_panels(fn, edges, order=24):
    nodes, weights = leggauss(order)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        total += half * float(np.dot(weights, fn(mid + half * nodes)))
    return total


def _converged(compute, tol=1e-12, what="quadrature"):
    coarse, fine = compute(1), compute(2)
    if abs(fine - coarse) > tol * max(1.0, abs(fine)):
        raise ResolutionError(f"{what} did not converge under refinement: {coarse!r} vs {fine!r}")
    return fine


def _area_2d(x_lo: float, x_hi: float, lower, width, panels: int) -> float:
    """Area of {x_lo <= x <= x_hi, lower(x) <= y <= lower(x) + width(x)} by tensor
    Gauss-Legendre in (x, v) with y = lower + v width.  Past the branch vertex the
    x-variable is cosh(theta)/sqrt(2) so the square-root edge is smooth."""
    nodes, weights = leggauss(8)
    v_nodes, v_w = 0.5 * (nodes + 1), 0.5 * weights

    def inner(x, dxdt):
        lo, w = lower(x), width(x)
        y = lo[:, None] + v_nodes[None, :] * w[:, None]
        jac = w[:, None] * np.ones_like(y)
        return dxdt * np.sum(v_w[None, :] * jac, axis=1)

    total = 0.0
    a = min(x_hi, max(x_lo, 0.0))
    if x_lo < BRANCH_VERTEX:
        b = min(x_hi, BRANCH_VERTEX)
        total += _gauss_panels(lambda x: inner(x, 1.0), np.linspace(x_lo, b, panels + 1))
        a = b
    if x_hi > a:
        t0, t1 = math.acosh(math.sqrt(2.0) * max(a, BRANCH_VERTEX)), math.acosh(math.sqrt(2.0) * x_hi)
        edges = np.linspace(t0, t1, 4 * panels + 1)
        total += _gauss_panels(lambda t: inner(np.cosh(t) / math.sqrt(2.0), np.sinh(t) / math.sqrt(2.0)), edges)
    return total


def _strip_lower(x):
    return np.sqrt(np.maximum(2 * x * x - 1.0, 0.0))


def _strip_width(x):
    # sqrt(2x^2 + 1) - sqrt(max(2x^2 - 1, 0)) without cancellation at large x
    upper = np.sqrt(2 * x * x + 1.0)
    lower = _strip_lower(x)
    return np.where(lower > 0, 2.0 / (upper + lower), upper - lower)


def _asymptote_width(x):
    # sqrt(2x^2 + 1) - sqrt(2) x
    return 1.0 / (np.sqrt(2 * x * x + 1.0) + math.sqrt(2.0) * x)


PAIRING_X = 1.0


def _line_plus(theta_max: float, panels: int) -> float:
    # along the positive branch x = cosh/sqrt2, y = sinh: alpha = (2 cosh^2 + sinh^2)/sqrt2 dtheta
    return _gauss_panels(lambda t: (2 * np.cosh(t) ** 2 + np.sinh(t) ** 2) / math.sqrt(2.0),
                         np.linspace(0.0, theta_max, panels + 1))


def _line_minus(theta_max: float, panels: int) -> float:
    # along the negative branch x = sinh/sqrt2, y = cosh: alpha = (2 sinh^2 + cosh^2)/sqrt2 dtheta
    return _gauss_panels(lambda t: (2 * np.sinh(t) ** 2 + np.cosh(t) ** 2) / math.sqrt(2.0),
                         np.linspace(0.0, theta_max, panels + 1))


def _paired_branch_density(x):
    """alpha(V+) - alpha(V-) per unit x, for branch points sharing the same x.

    On the branch 2x^2 - y^2 = -a, alpha = (3w + a)/sqrt(w + a) dx with
    w = 2x^2; the difference is regrouped so no large terms cancel.
    """
    w = 2 * x * x
    rp, rm = np.sqrt(w - 1.0), np.sqrt(w + 1.0)
    return 2.0 / rp + 2.0 / rm - 6.0 / (rp + rm)


def branch_gap(truncation: float, panels: int = 16) -> float:
    """Difference of the alpha line integrals along the positive and negative
    branches from the planes out to x = truncation.  Near the planes each branch
    uses its hyperbolic parametrization; beyond x = 1 the two branches are
    paired at equal x, which keeps the difference accurate for wide strips."""
    xc = min(PAIRING_X, truncation)
    gap = _line_plus(math.acosh(math.sqrt(2.0) * xc), panels) - _line_minus(math.asinh(math.sqrt(2.0) * xc), panels)
    if truncation > xc:
        edges = np.linspace(math.log(xc), math.log(truncation), 4 * panels + 1)
        gap += _gauss_panels(lambda u: np.exp(u) * _paired_branch_density(np.exp(u)), edges)
    return gap


def corner_term(radius: float = 1e-6, samples: int = 64) -> float:
    """Line integral of alpha over a quarter circle of the given radius about the
    origin; its limit as the radius shrinks is the corner contribution (zero)."""
    theta = np.linspace(0.0, 0.5 * math.pi, samples)
    x, y = radius * np.cos(theta), radius * np.sin(theta)
    dx, dy = np.gradient(x, theta), np.gradient(y, theta)
    return float(np.trapezoid(2 * x * dy + y * dx, theta))


@dataclass
class StripEnergy:
    area: float
    action_gap: float
    cap_term: float
    corner_terms: float
    stokes_defect: float
    scale: float  # unscaled area = scale * rescaled area

    @property
    def area_unscaled(self) -> float:
        return self.area * self.scale

    @property
    def action_gap_unscaled(self) -> float:
        return self.action_gap * self.scale

    def to_document(self) -> dict:
        return {"area": self.area, "action_gap": self.action_gap, "cap_term": self.cap_term,
                "corner_terms": self.corner_terms, "stokes_defect": self.stokes_defect,
                "area_unscaled": self.area_unscaled, "action_gap_unscaled": self.action_gap_unscaled}


def strip_energy(params: HandleParams, strip: StripRegion) -> StripEnergy:
    """Symplectic area by 2-D quadrature and the boundary accounting of alpha.

    Around one quadrant the boundary integral of alpha vanishes on both planes,
    so Stokes reads area = (positive branch) - (negative branch) + cap + corner.
    ``action_gap`` is the branch difference; the cap term closes the truncation.
    """
    X = strip.truncation
    copies = len(strip.quadrants)
    area = copies * _converged(lambda k: _area_2d(0.0, X, _strip_lower, _strip_width, 8 * k),
                               what="area quadrature")
    gap = copies * _converged(lambda k: branch_gap(X, 8 * k), what="branch line integrals")
    cap = copies * 2 * X * float(_strip_width(np.array(X)))
    corners = strip.corners * corner_term()
    defect = abs(area - gap - cap - corners)
    return StripEnergy(area, gap, cap, corners, defect, params.action_scale)


def band_area(strip: StripRegion, x_lo: float, x_hi: float) -> float:
    """2-D quadrature of the part of one quadrant between the asymptote
    y = sqrt(2) x and the negative branch, for x in [x_lo, x_hi] (rescaled)."""
    asymptote = lambda x: math.sqrt(2.0) * x
    return _converged(lambda k: _area_2d(x_lo, x_hi, asymptote, _asymptote_width, 8 * k),
                      what="band quadrature")


def band_integral_closed_form(x_lo: float, x_hi: float) -> float:
    """Closed form of int (sqrt(1 + 2x^2) - sqrt(2) x) dx via x = sinh(theta)/sqrt(2)."""
    def prim(x):
        th = math.asinh(math.sqrt(2.0) * x)
        return (th - 0.5 * math.exp(-2 * th)) / (2 * math.sqrt(2.0))
    return prim(x_hi) - prim(x_lo)


def strip_band_area(params: HandleParams, strip: StripRegion) -> float:
    """Strip area (rescaled) over the attaching band x in [eps^(s+1), eps^s] (unscaled)."""
    lo = params.epsilon ** (params.s + 1 - params.p)
    hi = params.epsilon ** (params.s - params.p)
    per = _converged(lambda k: _area_2d(lo, hi, _strip_lower, _strip_width, 8 * k), what="band quadrature")
    return len(strip.quadrants) * per


@dataclass
class MonotonicityReport:
    epsilon: float
    strip_area: float
    escape_area: float
    ratio: float
    empirical_constant: float
    passed: bool

    def to_document(self) -> dict:
        return {"epsilon": self.epsilon, "strip_area": self.strip_area, "escape_area": self.escape_area,
                "ratio": self.ratio, "empirical_constant": self.empirical_constant, "pass": self.passed}


def monotonicity_probe(params: HandleParams, variant: str = "two-corner") -> MonotonicityReport:
    """Compare the strip area over the attaching band with the escape area eps^(2q).

    PASS iff the strip area is smaller by the separation factor.  The reported
    constant is ratio / eps^(2(p - q)).
    """
    strip = build_strip(params, variant, nx=8, ny=2)
    a_strip = strip_band_area(params, strip) * params.action_scale
    a_escape = params.epsilon ** (2 * params.q)
    ratio = a_strip / a_escape
    const = ratio / params.epsilon ** (2 * (params.p - params.q))
    return MonotonicityReport(params.epsilon, a_strip, a_escape, ratio, const,
                              ratio * MONOTONICITY_SEPARATION <= 1.0)


# ----------------------------------------------------------------------------
# Linearized Cauchy-Riemann operator on the truncated strip
# ----------------------------------------------------------------------------

def _t_operator(N: int, boundary: str) -> np.ndarray:
    """Staggered discretization of (u, v) -> (v_t, -u_t) on [0, 1].

    ``mixed``: v = 0 at t = 0 and u = 0 at t = 1 (real / imaginary planes).
    ``matching``: v = 0 at both ends (real / real planes).
    """
    h = 1.0 / N
    if boundary == "mixed":
        # u at nodes t_j (j = 0..N-1, u_N = 0); v at half nodes (j + 1/2), ghost v_{-1/2} = -v_{1/2}
        Dv = np.zeros((N, N))
        for j in range(N):
            Dv[j, j] += 1.0 / h
            if j > 0:
                Dv[j, j - 1] -= 1.0 / h
            else:
                Dv[j, 0] += 1.0 / h
        Du = np.zeros((N, N))
        for j in range(N):
            Du[j, j] -= 1.0 / h
            if j + 1 < N:
                Du[j, j + 1] += 1.0 / h
    elif boundary == "matching":
        # u at half nodes (N values); v at interior nodes (N - 1 values), v = 0 at both ends
        Dv = np.zeros((N, N - 1))
        for j in range(N):
            if j < N - 1:
                Dv[j, j] += 1.0 / h
            if j > 0:
                Dv[j, j - 1] -= 1.0 / h
        Du = np.zeros((N - 1, N))
        for j in range(N - 1):
            Du[j, j + 1] += 1.0 / h
            Du[j, j] -= 1.0 / h
    else:
        raise ContractViolation(f"unknown boundary condition {boundary!r}")
    nu, nv = Dv.shape[0], Du.shape[0]
    L = np.zeros((nu + nv, nu + nv))
    L[:nu, nu:] = Dv
    L[nu:, :nu] = -Du
    return L


@dataclass
class KernelReport:
    dimension: int
    unstable: bool
    smallest_singular_values: list
    grid: tuple
    asymptotic_gap: float

    def to_document(self) -> dict:
        return {"dimension": self.dimension, "unstable": self.unstable,
                "smallest_singular_values": self.smallest_singular_values,
                "grid": list(self.grid), "asymptotic_gap": self.asymptotic_gap}


def _kernel_count(n_t, n_s, t0, delta, boundary, tol):
    L = _t_operator(n_t, boundary)
    mu, modes = np.linalg.eig(L)
    mu, modes = mu.real, modes.real
    inverse = np.linalg.inv(modes)
    gap = float(np.min(np.abs(mu[np.abs(mu) > 1e-8]))) if np.any(np.abs(mu) > 1e-8) else math.inf
    d = L.shape[0]
    k = 2 * t0 / n_s
    I = np.eye(d)
    # box scheme in s: (w[i+1] - w[i]) / k = L (w[i+1] + w[i]) / 2
    step = np.zeros((n_s * d, (n_s + 1) * d))
    for i in range(n_s):
        step[i * d:(i + 1) * d, i * d:(i + 1) * d] = -I / k - L / 2
        step[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = I / k - L / 2
    # components growing faster than exp(delta |s|) are excluded at each end
    plus = inverse[mu >= delta - 1e-12] if delta > 0 else inverse[mu >= -1e-12]
    minus = inverse[mu <= -delta + 1e-12] if delta > 0 else inverse[mu <= 1e-12]
    end_plus = np.zeros((plus.shape[0], (n_s + 1) * d))
    end_plus[:, n_s * d:] = plus
    end_minus = np.zeros((minus.shape[0], (n_s + 1) * d))
    end_minus[:, :d] = minus
    A = np.vstack([step * k, end_plus, end_minus])
    sv = np.linalg.svd(A, compute_uv=False)
    deficit = max(A.shape[1] - A.shape[0], 0)
    small = int(np.sum(sv < tol * sv[0])) + deficit
    return small, sorted(float(x) for x in sv[-3:]), gap


def linearized_kernel_dim(params: HandleParams, t0: float = 3.0, delta: float = 0.5,
                          boundary: str = "mixed", n_t: int = 8, n_s: int = 24,
                          tol: float = 1e-8) -> KernelReport:
    """Kernel dimension of the discretized operator d/ds + i d/dt on
    [-t0, t0] x [0, 1] with boundary planes R^n (t = 0) and iR^n (t = 1), or
    R^n on both sides for ``boundary='matching'``.

    Solutions may grow like exp(delta |s|) at either end.  The operator splits
    into n identical scalar problems, so the scalar count is multiplied by n.
    The count is repeated on a 2x refined grid and must agree.
    """
    if delta < 0:
        raise ContractViolation("weight must be nonnegative")
    first, sv, gap = _kernel_count(n_t, n_s, t0, delta, boundary, tol)
    if delta >= gap:
        raise ContractViolation(f"weight {delta} must be below the smallest nonzero asymptotic eigenvalue {gap:.4f}")
    second, sv2, _ = _kernel_count(2 * n_t, 2 * n_s, t0, delta, boundary, tol)
    unstable = delta == 0
    if first != second and not unstable:
        raise ResolutionError(f"kernel estimate changed under refinement: {first} -> {second}")
    return KernelReport(params.n * second, unstable or first != second, sv2, (2 * n_t, 2 * n_s), gap)
