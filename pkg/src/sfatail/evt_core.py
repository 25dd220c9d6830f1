"""Extreme-value building blocks.

GEV distribution functions, the joint law of the top ``k`` limiting order
statistics, self-normalization of a sorted tail, the density of the
self-normalized tail, and exact sampling from the limiting laws.

All functions are pure; random streams are passed in by the caller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateTail, QuadratureFailure

__all__ = [
    "QuadratureConfig",
    "DEFAULT_QUADRATURE",
    "gev_cdf",
    "gev_log_pdf",
    "joint_topk_log_density",
    "self_normalize",
    "check_normalized",
    "log_density_matrix",
    "log_normalized_density",
    "normalized_density",
    "topk_from_arrivals",
    "sample_topk",
    "sample_normalized",
]

K_CAP = 200


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for the adaptive quadrature behind :func:`normalized_density`.

    ``xi_zero`` is the threshold below which the closed-form xi -> 0 branch
    replaces quadrature.
    """

    rtol: float = 1e-8
    atol: float = 1e-13
    max_subdivisions: int = 200
    xi_zero: float = 1e-6

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.xi_zero > 0):
            raise ValueError("quadrature tolerances and xi_zero must be positive")
        if self.max_subdivisions < 4:
            raise ValueError("max_subdivisions must be at least 4")


DEFAULT_QUADRATURE = QuadratureConfig()


def _check_xi(xi):
    xi = np.asarray(xi, dtype=float)
    if np.any(~np.isfinite(xi)) or np.any(xi < 0):
        raise ValueError("tail index must be finite and nonnegative")
    return xi


def gev_cdf(xi: float, v):
    """GEV distribution function, ``exp(-(1 + xi v)^(-1/xi))``."""
    xi = float(_check_xi(xi))
    v = np.asarray(v, dtype=float)
    if xi == 0.0:
        out = np.exp(-np.exp(-v))
    else:
        z = xi * v
        inside = z > -1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(inside, np.exp(-np.exp(-np.log1p(np.where(inside, z, 0.0)) / xi)), 0.0)
    return out[()] if out.ndim == 0 else out


def gev_log_pdf(xi: float, v):
    """Log density of the GEV law; ``-inf`` off the support."""
    xi = float(_check_xi(xi))
    v = np.asarray(v, dtype=float)
    if xi == 0.0:
        with np.errstate(over="ignore"):
            out = -v - np.exp(-v)
    else:
        z = xi * v
        inside = z > -1.0
        lz = np.log1p(np.where(inside, z, 0.0))
        with np.errstate(over="ignore"):
            out = np.where(inside, -np.exp(-lz / xi) - (1.0 / xi + 1.0) * lz, -np.inf)
    return out[()] if out.ndim == 0 else out


def _gev_log_cdf(xi, v):
    if xi == 0.0:
        return -np.exp(-v)
    z = xi * v
    inside = z > -1.0
    lz = np.log1p(np.where(inside, z, 0.0))
    return np.where(inside, -np.exp(-lz / xi), -np.inf)


def joint_topk_log_density(xi: float, v) -> float:
    """Log joint density of the ``k`` largest limiting order statistics.

    ``v`` is ordered from the largest down.  Returns ``-inf`` when the
    ordering is violated or a point lies off the support.
    """
    xi = float(_check_xi(xi))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1 or v.size < 1:
        raise ValueError("v must be a nonempty 1-d sequence")
    if np.any(np.diff(v) > 0):
        return -math.inf
    if xi > 0 and np.any(xi * v <= -1.0):
        return -math.inf
    log_g = gev_log_pdf(xi, v)
    log_cdf = _gev_log_cdf(xi, v)
    return float(log_cdf[-1] + np.sum(log_g - log_cdf))


def self_normalize(tail) -> np.ndarray:
    """Shift a descending tail by its smallest entry and scale by its range.

    Accepts one tail of shape ``(k,)`` or a batch of shape ``(n, k)``.
    The result starts at exactly 1 and ends at exactly 0.
    """
    z = np.asarray(tail, dtype=float)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise ValueError("tail must have shape (k,) or (n, k) with k >= 2")
    if not np.all(np.isfinite(z)):
        raise ValueError("tail contains non-finite values")
    if np.any(np.diff(z, axis=-1) > 0):
        raise ValueError("tail must be sorted in descending order")
    low = z[..., -1:]
    span = z[..., :1] - low
    if np.any(span <= 0):
        raise DegenerateTail("tail has zero range; the self-normalized statistic is undefined")
    out = (z - low) / span
    out[..., 0] = 1.0
    out[..., -1] = 0.0
    return out


def check_normalized(vstar) -> np.ndarray:
    """Validate a normalized tail (or batch) and return it as a float array."""
    v = np.asarray(vstar, dtype=float)
    if v.ndim not in (1, 2):
        raise ValueError("normalized tail must have shape (k,) or (n, k)")
    if v.shape[-1] < 3:
        raise ValueError("k must be at least 3; smaller tails carry no information")
    if np.any(v[..., 0] != 1.0) or np.any(v[..., -1] != 0.0):
        raise ValueError("normalized tail must start at 1 and end at 0")
    if np.any(np.diff(v, axis=-1) > 0):
        raise ValueError("normalized tail must be weakly decreasing")
    return v


def log_density_matrix(vstars, xis, q: QuadratureConfig | None = None) -> np.ndarray:
    """Log density of each normalized tail (rows) at each tail index (columns)."""
    q = q or DEFAULT_QUADRATURE
    V = check_normalized(np.atleast_2d(vstars))
    xi = np.atleast_1d(_check_xi(xis)).astype(float)
    out = _kernels.log_density_matrix(V, xi, q.rtol, q.atol, q.max_subdivisions, q.xi_zero)
    if np.isnan(out).any():
        r, c = np.argwhere(np.isnan(out))[0]
        raise QuadratureFailure(
            f"quadrature did not reach rtol={q.rtol} within {q.max_subdivisions} "
            f"subdivisions (xi={xi[c]:.6g}, row {r})"
        )
    return out


def log_normalized_density(xi, vstar, q: QuadratureConfig | None = None):
    """Log of :func:`normalized_density`; the form to use for large ``k``."""
    v = check_normalized(vstar)
    scalar_xi = np.ndim(xi) == 0
    out = log_density_matrix(v, np.atleast_1d(xi), q)
    if v.ndim == 1:
        out = out[0]
    if scalar_xi:
        out = out[..., 0]
    return float(out) if np.ndim(out) == 0 else out


def normalized_density(xi, vstar, q: QuadratureConfig | None = None):
    """Density of the self-normalized top-``k`` vector under tail index ``xi``.

    >>> round(normalized_density(0.0, [1.0, 0.5, 0.0]), 6)
    0.888889

    For ``k`` above 200 only :func:`log_normalized_density` is offered.
    """
    if np.shape(vstar)[-1] > K_CAP:
        raise ValueError(f"k > {K_CAP}: use log_normalized_density")
    out = np.exp(log_normalized_density(xi, vstar, q))
    return float(out) if np.ndim(out) == 0 else out


def _exponential_arrivals(k, rng, size):
    shape = (k,) if size is None else (int(size), k)
    return np.cumsum(rng.standard_exponential(shape), axis=-1)


def topk_from_arrivals(xi, arrivals) -> np.ndarray:
    """Map Poisson arrival times (last axis ascending) to limiting top-k draws.

    ``xi`` may be a scalar or one value per row of ``arrivals``.
    """
    xi = np.asarray(_check_xi(xi), dtype=float)
    log_arrivals = np.log(arrivals)
    if xi.ndim == 0:
        if xi == 0.0:
            return -log_arrivals
        return np.expm1(-xi * log_arrivals) / xi
    xi = xi[:, None]
    safe = np.where(xi > 0.0, xi, 1.0)
    return np.where(xi > 0.0, np.expm1(-xi * log_arrivals) / safe, -log_arrivals)


def sample_topk(xi: float, k: int, rng, size: int | None = None) -> np.ndarray:
    """Exact draw(s) of the ``k`` largest limiting order statistics.

    With ``G_j`` the arrival times of a unit-rate Poisson process the draw is
    ``(G_j^-xi - 1)/xi`` (``-log G_j`` at ``xi = 0``), strictly decreasing.
    Returns shape ``(k,)`` or ``(size, k)``.
    """
    xi = float(_check_xi(xi))
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(rng)
    return topk_from_arrivals(xi, _exponential_arrivals(int(k), rng, size))


def sample_normalized(xi: float, k: int, rng, size: int | None = None) -> np.ndarray:
    """Exact draw(s) of the self-normalized top-``k`` vector."""
    if k < 3:
        raise ValueError("k must be at least 3")
    return self_normalize(sample_topk(xi, k, rng, size))
