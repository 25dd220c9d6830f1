"""OLS frontier fits, residual tails, and the per-group tail diagnostic."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .artifacts import CalibrationArtifact, CalibrationStore
from .errors import DegenerateTail, RankDeficient, SfaTailError, ZeroVariance
from .evt_core import QuadratureConfig
from .tail_tests import normal_family_left_test, thin_tail_test

__all__ = [
    "Orientation",
    "Dataset",
    "RegressionFit",
    "DiagnosticRow",
    "ols_fit",
    "residual_tails",
    "residual_skewness",
    "run_frontier_diagnostic",
    "format_p_value",
    "SIMULATION_K",
    "EMPIRICAL_K",
]

EMPIRICAL_K = (25, 50, 75, 100)
SIMULATION_K = (10, 20, 50)
RANK_TOL = 1e-10


class Orientation(str, enum.Enum):
    PRODUCTION = "production"
    COST = "cost"

    @property
    def sign(self) -> float:
        return 1.0 if self is Orientation.PRODUCTION else -1.0


@dataclass
class Dataset:
    """Response, design matrix (leading column of ones) and optional group labels."""

    response: np.ndarray
    design: np.ndarray
    groups: np.ndarray | None = None

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=float)
        self.design = np.asarray(self.design, dtype=float)
        if self.design.ndim == 1:
            self.design = self.design[:, None]
        n, p = self.design.shape
        if self.response.shape != (n,):
            raise ValueError("response and design have different row counts")
        if not (np.all(np.isfinite(self.response)) and np.all(np.isfinite(self.design))):
            raise ValueError("data contain non-finite values")
        if n and not np.all(self.design[:, 0] == 1.0):
            raise ValueError("the first design column must be the constant 1")
        if self.groups is not None:
            self.groups = np.asarray(self.groups)
            if self.groups.shape != (n,):
                raise ValueError("one group label per row is required")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    def subset(self, mask) -> "Dataset":
        g = None if self.groups is None else self.groups[mask]
        return Dataset(self.response[mask], self.design[mask], g)


@dataclass
class RegressionFit:
    beta: np.ndarray
    residuals: np.ndarray
    condition: float  # smallest over largest singular value of the design


def ols_fit(data: Dataset) -> RegressionFit:
    """Least squares via Householder QR.

    The response is shifted by one of its own entries before solving, so an
    exactly representable relocation of ``Y`` leaves the residuals bitwise
    unchanged.
    """
    X, y = data.design, data.response
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more rows than columns (n={n}, p={p})")
    Q, R = np.linalg.qr(X, mode="reduced")
    sv = np.linalg.svd(R, compute_uv=False)
    condition = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    if condition < RANK_TOL:
        raise RankDeficient(f"design is rank deficient (singular value ratio {condition:.3g})")
    ref = np.partition(y, (n - 1) // 2)[(n - 1) // 2]
    yc = y - ref
    beta = solve_triangular(R, Q.T @ yc)
    resid = yc - X @ beta
    beta[0] += ref
    return RegressionFit(beta=beta, residuals=resid, condition=condition)


def _residuals(fit_or_residuals) -> np.ndarray:
    if isinstance(fit_or_residuals, RegressionFit):
        return fit_or_residuals.residuals
    return np.asarray(fit_or_residuals, dtype=float)


def residual_tails(fit, orientation: Orientation | str, k: int):
    """Upper and (negated) lower ``k``-tails of the oriented residuals.

    Both come back in descending order so they feed ``self_normalize``
    the same way.  Cost orientation flips the residual sign first.
    """
    e = Orientation(orientation).sign * _residuals(fit)
    n = e.size
    if k < 1 or 2 * k > n:
        raise ValueError(f"k={k} must satisfy 1 <= k <= n/2 (n={n})")
    order = np.argsort(e, kind="stable")
    upper = e[order[::-1][:k]]
    lower = -e[order[:k]]
    for name, t in (("upper", upper), ("lower", lower)):
        if t[0] == t[-1]:
            raise DegenerateTail(f"{name} tail has zero range")
    return upper, lower


def residual_skewness(fit) -> float:
    """Sample skewness ``m3 / m2**1.5`` of the residuals (biased moments)."""
    e = _residuals(fit)
    if e.size < 3:
        raise ValueError("need at least 3 residuals")
    d = e - e.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        raise ZeroVariance("residual variance is zero")
    return float(np.mean(d ** 3) / m2 ** 1.5)


@dataclass
class DiagnosticRow:
    group: object
    k: int
    tail: str
    statistic: float | None = None
    p_value: float | None = None
    reject: bool | None = None
    error: str | None = None


def _calibration_for(calibrations, k, alpha):
    if isinstance(calibrations, CalibrationStore):
        return calibrations.load("thin_tail", k, alpha)
    calib = calibrations[k]
    if not isinstance(calib, CalibrationArtifact):
        raise TypeError("calibrations must map k to CalibrationArtifact")
    return calib


def run_frontier_diagnostic(data: Dataset, orientation: Orientation | str = "production",
                            ks: Sequence[int] = EMPIRICAL_K,
                            calibrations: Mapping[int, CalibrationArtifact] | CalibrationStore = None,
                            rng=None, *, alpha: float = 0.05,
                            tails: Sequence[str] = ("left", "right"),
                            groups: Sequence | None = None,
                            q: QuadratureConfig | None = None) -> list[DiagnosticRow]:
    """Fit OLS per group and run the thin-tail test on each tail for each ``k``.

    Rows are ordered by group, then ``k``, then tail.  A failure inside one
    group (too few rows, rank deficiency, tied tails) is recorded on that
    group's rows and does not stop the others.  Missing calibrations raise
    before any work is done.
    """
    if calibrations is None:
        raise ValueError("calibrations are required")
    orientation = Orientation(orientation)
    tails = [t for t in ("left", "right") if t in set(tails)]
    ks = sorted(set(int(k) for k in ks))
    calibs = {k: _calibration_for(calibrations, k, alpha) for k in ks}

    if groups is None:
        groups = [None] if data.groups is None else sorted(set(data.groups.tolist()))
    rows = []
    for g in groups:
        try:
            sub = data if g is None else data.subset(data.groups == g)
            if sub.n == 0:
                raise ValueError(f"group {g!r} has no rows")
            fit = ols_fit(sub)
            err = None
        except (SfaTailError, ValueError) as exc:
            fit, err = None, f"{type(exc).__name__}: {exc}"
        for k in ks:
            try:
                if err is not None:
                    raise _GroupFailure(err)
                upper, lower = residual_tails(fit, orientation, k)
                out = {}
                if "left" in tails:
                    out["left"] = normal_family_left_test(lower, calibs[k], rng, q)
                if "right" in tails:
                    out["right"] = thin_tail_test(upper, calibs[k], rng, q)
                for t in tails:
                    r = out[t]
                    rows.append(DiagnosticRow(g, k, t, r.statistic, r.p_value, r.reject))
            except _GroupFailure as exc:
                rows.extend(DiagnosticRow(g, k, t, error=str(exc)) for t in tails)
            except (SfaTailError, ValueError) as exc:
                msg = f"{type(exc).__name__}: {exc}"
                rows.extend(DiagnosticRow(g, k, t, error=msg) for t in tails)
    return rows


class _GroupFailure(Exception):
    pass


def format_p_value(p: float | None, censor: bool = False, digits: int = 2) -> str:
    """Render a p-value; with ``censor`` values above 0.1 print as ``>0.1``."""
    if p is None or (isinstance(p, float) and np.isnan(p)):
        return ""
    if censor and p > 0.1:
        return ">0.1"
    return f"{p:.{digits}f}"
