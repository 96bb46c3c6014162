"""Lorentz hyperboloid geometry and bounded/product metrics.

Points of the hyperboloid are float64 arrays whose last axis holds ambient
Minkowski coordinates ``(x0, x1, ..., xd)``. Tangent vectors at the origin
``o = (1, 0, ..., 0)`` are stored by their Euclidean part only (length ``d``);
the ambient tangent vector is ``[0, v]``. All functions broadcast over
leading axes, so a matrix of points is simply an ``(n, d+1)`` array.

Curvature is fixed at -1.
"""
from dataclasses import dataclass

import numpy as np

# below this tangent norm exp/log at the origin return exact origin / zero
EPS_EXP = 1e-12


@dataclass(frozen=True)
class BoundedMetricParams:
    """Weights of the two bounded terms of a product metric."""

    k1: float = 0.5
    k2: float = 0.5

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError(f"k1 and k2 must be positive, got {self.k1}, {self.k2}")


def origin(d: int) -> np.ndarray:
    o = np.zeros(d + 1)
    o[0] = 1.0
    return o


def _as_f64(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def minkowski_inner(a, b) -> np.ndarray:
    """``-a0*b0 + sum_i a_i*b_i`` along the last axis."""
    a, b = _as_f64(a), _as_f64(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    if a.shape[-1] < 2:
        raise ValueError("ambient vectors need at least 2 coordinates")
    return -a[..., 0] * b[..., 0] + np.einsum("...i,...i->...", a[..., 1:], b[..., 1:])


def manifold_residual(x) -> np.ndarray:
    """``|<x,x>_L + 1|``, the distance from the hyperboloid constraint."""
    return np.abs(minkowski_inner(x, x) + 1.0)


def project(x) -> np.ndarray:
    """Renormalize onto the upper sheet by recomputing ``x0`` from the spatial part."""
    x = np.array(x, dtype=np.float64)
    x[..., 0] = np.sqrt(1.0 + np.einsum("...i,...i->...", x[..., 1:], x[..., 1:]))
    return x


def geodesic_dist(x, y) -> np.ndarray:
    """``arcosh(-<x,y>_L)`` with the argument clamped to ``[1, inf)``."""
    z = -minkowski_inner(x, y)
    return np.arccosh(np.maximum(z, 1.0))


def exp_origin(v) -> np.ndarray:
    """Exponential map at the origin.

    Maps tangent coordinates ``v`` (shape ``(..., d)``) to ambient points
    ``(cosh|v|, sinh|v| v/|v|)``. The time coordinate is recomputed from the
    spatial part so the output sits on the sheet up to a single rounding.
    """
    v = _as_f64(v)
    if not np.all(np.isfinite(v)):
        raise ValueError("exp_origin: non-finite tangent vector")
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    small = r < EPS_EXP
    safe_r = np.where(small, 1.0, r)
    spatial = np.where(small, 0.0, np.sinh(r) / safe_r * v)
    out = np.empty(v.shape[:-1] + (v.shape[-1] + 1,))
    out[..., 1:] = spatial
    out[..., 0] = np.sqrt(1.0 + np.einsum("...i,...i->...", spatial, spatial))
    return out


def log_origin(y) -> np.ndarray:
    """Logarithmic map at the origin, returning tangent coordinates.

    On the sheet ``arcosh(y0) == asinh(|y_spatial|)``; the asinh form is used
    because arcosh loses half the digits near ``y0 = 1``.
    """
    y = _as_f64(y)
    spatial = y[..., 1:]
    s = np.linalg.norm(spatial, axis=-1, keepdims=True)
    dist = np.arcsinh(s)
    small = dist < EPS_EXP
    safe_s = np.where(small, 1.0, s)
    return np.where(small, 0.0, dist / safe_s * spatial)


def bounded(d_val, k: float = 1.0):
    """``k * d / (1 + d)``: maps a metric to one of diameter below ``k``."""
    d_val = _as_f64(d_val)
    if np.any(d_val < 0):
        raise ValueError("bounded: distances must be nonnegative")
    if not k > 0:
        raise ValueError("bounded: k must be positive")
    return k * d_val / (1.0 + d_val)


def weighted_product_distance(d1, d2, params: BoundedMetricParams = BoundedMetricParams()):
    """Combine two component distances as ``k1*b(d1) + k2*b(d2)`` with ``b(d) = d/(1+d)``."""
    return bounded(d1, params.k1) + bounded(d2, params.k2)


def product_distance(a1, a2, a3, a4) -> np.ndarray:
    """Product distance between (Euclidean a1, hyperbolic a2) and (a3, a4).

    ``0.5 * (b(|a1 - a3|) + b(d_L(a2, a4)))``; always in ``[0, 1)``.
    """
    a1, a3 = _as_f64(a1), _as_f64(a3)
    if a1.shape[-1] != a3.shape[-1]:
        raise ValueError(f"dimension mismatch: {a1.shape[-1]} vs {a3.shape[-1]}")
    de = np.linalg.norm(a1 - a3, axis=-1)
    dh = geodesic_dist(a2, a4)
    return weighted_product_distance(de, dh)


def lift_to_hyperboloid(x) -> np.ndarray:
    """Row-wise ``exp_o([0, x])`` of a feature matrix."""
    return exp_origin(x)
