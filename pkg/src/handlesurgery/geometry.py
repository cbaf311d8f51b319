"""Split coordinates on C^n = C x C^(n-1) and the standard forms.

A point is stored as ``(x1, y1, x2, y2)`` with ``x2, y2`` real vectors of
length n-1.  The symplectic form is ``dx ^ dy`` and the handle contact form is
``alpha = 2 x.dy + y.dx``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, InvalidJetPoint

JET_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class SplitPoint:
    x1: float
    y1: float
    x2: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        x2 = np.array(self.x2, dtype=float).reshape(-1)
        y2 = np.array(self.y2, dtype=float).reshape(-1)
        if x2.size < 1 or x2.shape != y2.shape:
            raise ContractViolation(
                f"x2 and y2 must be nonempty vectors of equal length, got {x2.shape} and {y2.shape}")
        x2.setflags(write=False)
        y2.setflags(write=False)
        object.__setattr__(self, "x1", float(self.x1))
        object.__setattr__(self, "y1", float(self.y1))
        object.__setattr__(self, "x2", x2)
        object.__setattr__(self, "y2", y2)

    @property
    def n(self) -> int:
        return 1 + self.x2.size

    @property
    def x(self) -> np.ndarray:
        return np.concatenate(([self.x1], self.x2))

    @property
    def y(self) -> np.ndarray:
        return np.concatenate(([self.y1], self.y2))

    @classmethod
    def from_xy(cls, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape or x.ndim != 1 or x.size < 2:
            raise ContractViolation(f"x and y must be equal-length vectors of length >= 2, got {x.shape}, {y.shape}")
        return cls(x[0], y[0], x[1:], y[1:])

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v, dtype=float)
        if v.ndim != 1 or v.size % 2 or v.size < 4:
            raise ContractViolation(f"flat vector must have even length >= 4, got {v.shape}")
        n = v.size // 2
        return cls.from_xy(v[:n], v[n:])

    def as_array(self) -> np.ndarray:
        """Flat vector ``(x, y)`` of length 2n."""
        return np.concatenate((self.x, self.y))

    def __add__(self, other):
        _check_same_dim(self, other)
        return type(self).from_array(self.as_array() + other.as_array())

    def __sub__(self, other):
        _check_same_dim(self, other)
        return type(self).from_array(self.as_array() - other.as_array())

    def __mul__(self, scalar):
        return type(self).from_array(float(scalar) * self.as_array())

    __rmul__ = __mul__

    def allclose(self, other, atol=1e-12, rtol=0.0) -> bool:
        return self.n == other.n and np.allclose(self.as_array(), other.as_array(), atol=atol, rtol=rtol)

    def __repr__(self):
        return f"{type(self).__name__}(x={self.x.tolist()}, y={self.y.tolist()})"


class TangentVec(SplitPoint):
    """Tangent vector at some base point, stored with the same layout as a point."""


def basis_vector(n: int, kind: str, index: int) -> TangentVec:
    """Unit coordinate vector along ``x_index`` or ``y_index`` (0-based over all n coordinates)."""
    v = np.zeros(2 * n)
    if kind == "x":
        v[index] = 1.0
    elif kind == "y":
        v[n + index] = 1.0
    else:
        raise ContractViolation(f"kind must be 'x' or 'y', got {kind!r}")
    return TangentVec.from_array(v)


def _check_same_dim(a: SplitPoint, b: SplitPoint):
    if a.n != b.n:
        raise ContractViolation(f"dimension mismatch: {a.n} vs {b.n}")


def eval_symplectic(u: SplitPoint, v: SplitPoint) -> float:
    """Standard symplectic form dx ^ dy on a pair of tangent vectors."""
    _check_same_dim(u, v)
    return float(u.x @ v.y - u.y @ v.x)


def eval_alpha(point: SplitPoint, v: SplitPoint) -> float:
    """Handle contact form 2 x.dy + y.dx at ``point`` applied to ``v``."""
    _check_same_dim(point, v)
    return float(2.0 * (point.x @ v.y) + point.y @ v.x)


def eval_alpha_jet(q, p, z, v) -> float:
    """Standard form dz - p.dq on the 1-jet space of the unit sphere.

    ``v`` is a triple ``(v_q, v_p, v_z)``.  The base point must satisfy
    |q| = 1 and p.q = 0; ``z`` only locates the point and does not enter the value.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    vq, vp, vz = v
    vq = np.asarray(vq, dtype=float)
    vp = np.asarray(vp, dtype=float)
    if q.shape != p.shape or vq.shape != q.shape or vp.shape != q.shape:
        raise ContractViolation("jet components must share one dimension")
    if abs(q @ q - 1.0) > JET_TOLERANCE or abs(p @ q) > JET_TOLERANCE * max(1.0, float(np.linalg.norm(p))):
        raise InvalidJetPoint(f"|q|^2-1 = {q @ q - 1.0:.3e}, p.q = {p @ q:.3e}")
    if not math.isfinite(float(z)):
        raise InvalidJetPoint("z must be finite")
    return float(vz - p @ vq)


def two_sum(a: float, b: float):
    """Error-free transformation: a + b = s + err exactly."""
    s = a + b
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return s, err


def compensated_sum(values) -> tuple[float, float]:
    """Double-double accumulation of a sequence of floats, returned as (high, low)."""
    hi, lo = 0.0, 0.0
    for v in values:
        hi, err = two_sum(hi, float(v))
        lo += err
    hi, lo = two_sum(hi, lo)
    return hi, lo


def action_sum(values, compensated: bool = False) -> float:
    """Sum of action contributions, optionally with compensated accumulation."""
    if compensated:
        hi, lo = compensated_sum(values)
        return hi + lo
    return float(sum(float(v) for v in values))
