"""Thin-tail and equal-tail likelihood-ratio tests.

The thin-tail statistic is the weighted-average density of the normalized
tail over heavy-tailed alternatives divided by its density at ``xi = 0``.
The equal-tail statistic compares two independent normalized tails (left
and right of the residuals): alternatives put more tail weight on the left,
and the composite null is collapsed with a least-favorable mixture over a
grid of common tail indices.  Critical values come from simulating the
limiting laws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .artifacts import CalibrationArtifact
from .errors import CalibrationDivergence, CalibrationMismatch
from .evt_core import (
    DEFAULT_QUADRATURE,
    QuadratureConfig,
    check_normalized,
    log_density_matrix,
    sample_normalized,
    self_normalize,
    topk_from_arrivals,
)

__all__ = [
    "WeightGrid",
    "DEFAULT_GRID",
    "LeastFavorableDistribution",
    "TestResult",
    "SizeReport",
    "uniform_alternative_weight",
    "thin_tail_statistic",
    "thin_tail_statistics",
    "simulate_null_statistics",
    "critical_value_from_null",
    "simulate_critical_value",
    "p_value_from_null",
    "mc_p_value",
    "thin_tail_artifacts",
    "thin_tail_test",
    "normal_family_left_test",
    "equal_tail_statistic",
    "equal_tail_statistics",
    "calibrate_lfd",
    "equal_tail_artifact",
    "verify_size",
    "equal_tail_test",
]


@dataclass(frozen=True)
class WeightGrid:
    """Point masses over tail indices in ``[0, 0.99]``."""

    points: tuple
    masses: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        ms = np.asarray(self.masses, dtype=float)
        if pts.ndim != 1 or pts.shape != ms.shape or pts.size == 0:
            raise ValueError("points and masses must be 1-d with equal nonzero length")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly ascending")
        if pts[0] < 0 or pts[-1] > 0.99:
            raise ValueError("grid points must lie in [0, 0.99]")
        if np.any(ms < 0) or abs(ms.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be nonnegative and sum to 1")
        object.__setattr__(self, "points", tuple(pts.tolist()))
        object.__setattr__(self, "masses", tuple(ms.tolist()))

    @classmethod
    def uniform(cls, n: int = 50, upper: float = 0.99) -> "WeightGrid":
        return cls(tuple(np.linspace(0.0, upper, n)), tuple(np.full(n, 1.0 / n)))

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.points)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.masses)

    def __len__(self):
        return len(self.points)


DEFAULT_GRID = WeightGrid.uniform()


@dataclass(frozen=True)
class LeastFavorableDistribution:
    grid: WeightGrid
    cv: float
    # importance-sampling size estimates on the grid at the returned (grid, cv)
    size_estimates: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.cv > 0:
            raise ValueError("cv must be positive")


@dataclass(frozen=True)
class TestResult:
    __test__ = False  # keep pytest from collecting this class

    statistic: float
    reject: bool
    p_value: float
    k: int
    alpha: float
    calibration_id: str
    seed: int | None = None


@dataclass(frozen=True)
class SizeReport:
    xi: np.ndarray
    rate: np.ndarray
    se: np.ndarray
    threshold: float
    flagged: np.ndarray
    replications: int

    @property
    def ok(self) -> bool:
        return not bool(self.flagged.any())


# ---------------------------------------------------------------------------
# thin-tail test
# ---------------------------------------------------------------------------

def _grid_with_zero(w: WeightGrid) -> np.ndarray:
    return np.append(w.xi, 0.0)


def _thin_from_logf(logf: np.ndarray, w: WeightGrid) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(w.w)
    log_num = logsumexp(logf[:, :-1] + log_w, axis=1)
    return np.exp(log_num - logf[:, -1])


def thin_tail_statistics(vstars, w: WeightGrid = DEFAULT_GRID,
                         q: QuadratureConfig | None = None) -> np.ndarray:
    """Vectorized :func:`thin_tail_statistic` over the rows of ``vstars``."""
    logf = log_density_matrix(np.atleast_2d(vstars), _grid_with_zero(w), q)
    return _thin_from_logf(logf, w)


def thin_tail_statistic(vstar, w: WeightGrid = DEFAULT_GRID,
                        q: QuadratureConfig | None = None) -> float:
    """Weighted alternative density over the ``xi = 0`` density."""
    v = check_normalized(vstar)
    if v.ndim != 1:
        raise ValueError("expected a single normalized tail; use thin_tail_statistics")
    return float(thin_tail_statistics(v, w, q)[0])


def simulate_null_statistics(k: int, w: WeightGrid, M: int, rng,
                             q: QuadratureConfig | None = None) -> np.ndarray:
    """Thin-tail statistics of ``M`` draws from the ``xi = 0`` limiting law."""
    if k < 3:
        raise ValueError("k must be at least 3")
    rng = np.random.default_rng(rng)
    return thin_tail_statistics(sample_normalized(0.0, k, rng, size=M), w, q)


def _critical_rank(M: int, alpha: float) -> int:
    # smallest r with r >= (M+1)(1-alpha); exact in rationals so that
    # "statistic > cv" and "p-value <= alpha" agree on the same draws
    r = math.ceil((M + 1) * (1 - Fraction(repr(float(alpha)))))
    if not 1 <= r <= M:
        raise ValueError(f"alpha={alpha} is not resolvable with {M} draws")
    return r


def critical_value_from_null(null_stats, alpha: float) -> float:
    null_stats = np.sort(np.asarray(null_stats, dtype=float))
    return float(null_stats[_critical_rank(null_stats.size, alpha) - 1])


def simulate_critical_value(k: int, alpha: float, w: WeightGrid = DEFAULT_GRID,
                            M: int = 10_000, rng=None,
                            q: QuadratureConfig | None = None) -> float:
    """Empirical ``1 - alpha`` quantile of the null statistic.

    The quantile is the order statistic of rank ``ceil((M+1)(1-alpha))``.
    """
    if M < 1000:
        raise ValueError("M must be at least 1000")
    return critical_value_from_null(simulate_null_statistics(k, w, M, rng, q), alpha)


def p_value_from_null(statistic: float, null_stats) -> float:
    null_stats = np.asarray(null_stats)
    return (1 + int(np.count_nonzero(null_stats >= statistic))) / (null_stats.size + 1)


def mc_p_value(statistic: float, k: int, w: WeightGrid = DEFAULT_GRID, M: int = 10_000,
               rng=None, q: QuadratureConfig | None = None) -> float:
    """Add-one Monte Carlo p-value against ``M`` fresh null draws."""
    if M < 1000:
        raise ValueError("M must be at least 1000")
    return p_value_from_null(statistic, simulate_null_statistics(k, w, M, rng, q))


@lru_cache(maxsize=16)
def _cached_null(k, w, M, seed, q):
    out = simulate_null_statistics(k, w, M, np.random.default_rng(seed), q)
    out.setflags(write=False)
    return out


def _artifact_grid(calib: CalibrationArtifact) -> WeightGrid:
    n = len(calib.grid_points)
    return WeightGrid(calib.grid_points, tuple(np.full(n, 1.0 / n)))


def thin_tail_artifacts(k: int, alphas=(0.01, 0.05, 0.10), w: WeightGrid = DEFAULT_GRID,
                        M: int = 10_000, seed: int = 0,
                        q: QuadratureConfig | None = None) -> list[CalibrationArtifact]:
    """Calibrate the thin-tail test for several levels from one null simulation.

    Only uniform weight grids can be stored, since the artifact records
    grid points but not masses.
    """
    if not np.allclose(w.w, 1.0 / len(w), rtol=0, atol=1e-15):
        raise ValueError("artifacts record uniform weight grids only")
    null = _cached_null(k, w, M, seed, q or DEFAULT_QUADRATURE)
    return [
        CalibrationArtifact(kind="thin_tail", k=k, alpha=float(a),
                            cv=critical_value_from_null(null, a),
                            grid_points=w.points, mc_draws=M, seed=seed)
        for a in alphas
    ]


def _check_artifact(calib: CalibrationArtifact, kind: str, *tails):
    if calib.kind != kind:
        raise CalibrationMismatch(f"expected a {kind} calibration, got {calib.kind}")
    for t in tails:
        if np.shape(t)[-1] != calib.k:
            raise CalibrationMismatch(
                f"tail has k={np.shape(t)[-1]} but the calibration is for k={calib.k}")


def _seed_of(rng):
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def thin_tail_test(tail, calib: CalibrationArtifact, rng=None,
                   q: QuadratureConfig | None = None) -> TestResult:
    """Test ``xi = 0`` against ``xi > 0`` on the upper tail of a sample.

    ``tail`` holds the ``k`` largest observations in descending order.  The
    p-value uses the calibration's own null draws unless ``rng`` (a seed or
    generator) asks for a fresh set of the same size.
    """
    _check_artifact(calib, "thin_tail", tail)
    q = q or DEFAULT_QUADRATURE
    w = _artifact_grid(calib)
    stat = thin_tail_statistic(self_normalize(tail), w, q)
    if rng is None:
        null = _cached_null(calib.k, w, calib.mc_draws, calib.seed, q)
        seed = calib.seed
    else:
        null = simulate_null_statistics(calib.k, w, calib.mc_draws, np.random.default_rng(rng), q)
        seed = _seed_of(rng)
    return TestResult(statistic=stat, reject=bool(stat > calib.cv),
                      p_value=p_value_from_null(stat, null), k=calib.k,
                      alpha=calib.alpha, calibration_id=calib.id, seed=seed)


def normal_family_left_test(lower, calib: CalibrationArtifact, rng=None,
                            q: QuadratureConfig | None = None) -> TestResult:
    """Thin-tail test on the (negated) left tail.

    Valid when the noise is in the normal family, where the equal-tail test
    collapses to the thin-tail test applied to the left tail.
    """
    return thin_tail_test(lower, calib, rng, q)


# ---------------------------------------------------------------------------
# equal-tail test
# ---------------------------------------------------------------------------

def uniform_alternative_weight(n: int) -> np.ndarray:
    """Uniform weight over grid pairs with a heavier left tail.

    Entry ``[i, j]`` weighs (left index ``xi_i``, right index ``xi_j``) and is
    nonzero only for ``j < i``.
    """
    w2 = np.tril(np.ones((n, n)), k=-1)
    return w2 / w2.sum()


def _check_w2(w2, n):
    w2 = np.asarray(w2, dtype=float)
    if w2.shape != (n, n):
        raise ValueError(f"alternative weight must be {n}x{n}")
    if np.any(w2 < 0) or np.any(np.triu(w2) != 0) or abs(w2.sum() - 1.0) > 1e-12:
        raise ValueError("alternative weight must be nonnegative, sum to 1, "
                         "and vanish unless the left index exceeds the right")
    return w2


def _log_numerator(la, lb, w2):
    ma = la.max(axis=1, keepdims=True)
    mb = lb.max(axis=1, keepdims=True)
    a = np.exp(la - ma)
    b = np.exp(lb - mb)
    raw = np.einsum("ni,ij,nj->n", a, w2, b)
    with np.errstate(divide="ignore"):
        out = np.log(raw) + ma[:, 0] + mb[:, 0]
        bad = ~(raw > 0)
        if bad.any():
            lw = np.log(w2)
            out[bad] = logsumexp(la[bad][:, :, None] + lb[bad][:, None, :] + lw, axis=(1, 2))
    return out


def _log_denominator(la, lb, masses):
    return logsumexp(la + lb, axis=1, b=np.broadcast_to(masses, la.shape))


def _equal_from_logf(la, lb, lfd, w2):
    with np.errstate(divide="ignore"):
        return np.exp(_log_numerator(la, lb, w2) - _log_denominator(la, lb, lfd.grid.w))


def equal_tail_statistics(vminus, vplus, lfd: LeastFavorableDistribution, w2=None,
                          q: QuadratureConfig | None = None) -> np.ndarray:
    vminus = np.atleast_2d(vminus)
    vplus = np.atleast_2d(vplus)
    if vminus.shape != vplus.shape:
        raise ValueError("left and right normalized tails must have the same shape")
    n = len(lfd.grid)
    w2 = uniform_alternative_weight(n) if w2 is None else _check_w2(w2, n)
    xi = lfd.grid.xi
    la = log_density_matrix(vminus, xi, q)
    lb = log_density_matrix(vplus, xi, q)
    return _equal_from_logf(la, lb, lfd, w2)


def equal_tail_statistic(vminus, vplus, lfd: LeastFavorableDistribution, w2=None,
                         q: QuadratureConfig | None = None) -> float:
    """Weighted alternative over least-favorable null for two independent tails.

    ``vminus`` is the normalized (negated) left tail, ``vplus`` the
    normalized right tail.  Both densities are evaluated on the grid of
    ``lfd``; ``w2`` defaults to :func:`uniform_alternative_weight`.
    """
    vminus = check_normalized(vminus)
    vplus = check_normalized(vplus)
    if vminus.ndim != 1 or vplus.ndim != 1:
        raise ValueError("expected single normalized tails; use equal_tail_statistics")
    return float(equal_tail_statistics(vminus, vplus, lfd, w2, q)[0])


@dataclass(frozen=True)
class _LfdDraws:
    la: np.ndarray
    lb: np.ndarray
    log_num: np.ndarray
    is_weights: np.ndarray  # (N, G): null density at each grid point over the proposal


def _draw_lfd_sample(k, N, grid, rng, q):
    rng = np.random.default_rng(rng)
    xi = grid.xi
    idx = rng.integers(0, xi.size, size=N)
    arr_minus = np.cumsum(rng.standard_exponential((N, k)), axis=1)
    arr_plus = np.cumsum(rng.standard_exponential((N, k)), axis=1)
    vminus = self_normalize(topk_from_arrivals(xi[idx], arr_minus))
    vplus = self_normalize(topk_from_arrivals(xi[idx], arr_plus))
    la = log_density_matrix(vminus, xi, q)
    lb = log_density_matrix(vplus, xi, q)
    logd = la + lb
    log_prop = logsumexp(logd, axis=1) - math.log(xi.size)
    weights = np.exp(logd - log_prop[:, None])
    log_num = _log_numerator(la, lb, uniform_alternative_weight(xi.size))
    for a in (la, lb, log_num, weights):
        a.setflags(write=False)
    return _LfdDraws(la, lb, log_num, weights)


@lru_cache(maxsize=4)
def _cached_lfd_sample(k, N, grid, seed, q):
    return _draw_lfd_sample(k, N, grid, np.random.default_rng(seed), q)


def _lfd_sample(k, N, grid, rng, q):
    if isinstance(rng, (int, np.integer)):
        return _cached_lfd_sample(k, N, grid, int(rng), q)
    return _draw_lfd_sample(k, N, grid, rng, q)


def calibrate_lfd(k: int, alpha: float = 0.05, N: int = 10_000, iterations: int = 500,
                  kappa: float = 2.0, rng=None, *, decay: float = 0.99,
                  grid: WeightGrid | None = None, size_slack: float = 0.005,
                  q: QuadratureConfig | None = None) -> LeastFavorableDistribution:
    """Least-favorable null weights and critical value for the equal-tail test.

    ``N`` null pairs are drawn with the common tail index picked uniformly
    from ``grid`` (50 points on ``[0, 0.99]`` by default).  Rejection
    rates at every grid point are estimated by importance sampling against
    that mixture.  Starting from uniform masses and ``c = 1``, the
    unnormalized masses ``c * Lambda`` move by ``kappa_s * (P - alpha)``
    with ``kappa_s = kappa * decay**s``, clipped at zero.  Raises
    :class:`CalibrationDivergence` if some estimated rate still exceeds
    ``alpha + size_slack`` afterwards.
    """
    if N < 1000:
        raise ValueError("N must be at least 1000")
    if iterations < 0 or kappa <= 0 or not 0 < decay <= 1:
        raise ValueError("need iterations >= 0, kappa > 0 and decay in (0, 1]")
    grid = grid or DEFAULT_GRID
    q = q or DEFAULT_QUADRATURE
    n = len(grid)
    draws = _lfd_sample(k, N, grid, rng, q)
    logd = draws.la + draws.lb
    shift = logd.max(axis=1)
    scaled = np.exp(logd - shift[:, None])
    with np.errstate(over="ignore"):
        target = np.exp(draws.log_num - shift)

    def rejection_rates(mu):
        reject = target > scaled @ mu
        return draws.is_weights[reject].sum(axis=0) / N

    mu = np.full(n, 1.0 / n)
    if iterations == 0:
        return LeastFavorableDistribution(WeightGrid(grid.points, tuple(mu)), 1.0,
                                          tuple(rejection_rates(mu)))
    step = float(kappa)
    for _ in range(iterations):
        mu = np.maximum(mu + step * (rejection_rates(mu) - alpha), 0.0)
        step *= decay
    c = float(mu.sum())
    if not c > 0:
        raise CalibrationDivergence("all least-favorable masses collapsed to zero")
    size = rejection_rates(mu)
    if size.max() > alpha + size_slack:
        j = int(size.argmax())
        raise CalibrationDivergence(
            f"estimated size {size[j]:.4f} at xi={grid.xi[j]:.3f} exceeds "
            f"{alpha + size_slack:.4f} after {iterations} iterations; "
            "try more iterations or a larger N, or retune kappa")
    return LeastFavorableDistribution(WeightGrid(grid.points, tuple(mu / c)), c, tuple(size))


def equal_tail_artifact(k: int, alpha: float = 0.05, N: int = 10_000, iterations: int = 500,
                        kappa: float = 2.0, seed: int = 0, **kwargs) -> CalibrationArtifact:
    lfd = calibrate_lfd(k, alpha, N, iterations, kappa, seed, **kwargs)
    return CalibrationArtifact(kind="equal_tail", k=k, alpha=float(alpha), cv=lfd.cv,
                               grid_points=lfd.grid.points, lambda_masses=lfd.grid.masses,
                               mc_draws=N, seed=seed)


def _artifact_lfd(calib: CalibrationArtifact) -> LeastFavorableDistribution:
    return LeastFavorableDistribution(WeightGrid(calib.grid_points, calib.lambda_masses), calib.cv)


def verify_size(lfd: LeastFavorableDistribution, k: int, alpha: float, fine_grid,
                M: int = 1000, rng=None, q: QuadratureConfig | None = None) -> SizeReport:
    """Simulated null rejection rates of the equal-tail test on ``fine_grid``.

    Points whose rate exceeds ``alpha`` plus two binomial standard errors
    are flagged.
    """
    fine = np.asarray(fine_grid, dtype=float)
    if fine.ndim != 1 or np.any(fine < 0) or np.any(fine > 0.99):
        raise ValueError("fine grid must lie within [0, 0.99]")
    rng = np.random.default_rng(rng)
    w2 = uniform_alternative_weight(len(lfd.grid))
    rates = np.empty(fine.size)
    for i, xi in enumerate(fine):
        vminus = sample_normalized(xi, k, rng, size=M)
        vplus = sample_normalized(xi, k, rng, size=M)
        stats = equal_tail_statistics(vminus, vplus, lfd, w2, q)
        rates[i] = np.mean(stats > lfd.cv)
    se = np.sqrt(rates * (1 - rates) / M)
    threshold = alpha + 2.0 * math.sqrt(alpha * (1 - alpha) / M)
    return SizeReport(fine, rates, se, threshold, rates > threshold, M)


def equal_tail_test(lower, upper, calib: CalibrationArtifact, rng=None,
                    q: QuadratureConfig | None = None) -> TestResult:
    """Test equal tail indices against a heavier left tail.

    ``lower`` is the left tail negated into descending order, ``upper`` the
    right tail.  The p-value is the largest importance-sampling estimate,
    over the calibration grid, of the null probability of a statistic at
    least as large as the observed one.
    """
    _check_artifact(calib, "equal_tail", lower, upper)
    q = q or DEFAULT_QUADRATURE
    lfd = _artifact_lfd(calib)
    stat = equal_tail_statistic(self_normalize(lower), self_normalize(upper), lfd, None, q)
    grid = WeightGrid(calib.grid_points, tuple(np.full(len(calib.grid_points),
                                                       1.0 / len(calib.grid_points))))
    if rng is None:
        draws = _lfd_sample(calib.k, calib.mc_draws, grid, calib.seed, q)
        seed = calib.seed
    else:
        draws = _lfd_sample(calib.k, calib.mc_draws, grid, np.random.default_rng(rng), q)
        seed = _seed_of(rng)
    null_stats = np.exp(draws.log_num - _log_denominator(draws.la, draws.lb, lfd.grid.w))
    exceed = draws.is_weights[null_stats >= stat].sum(axis=0)
    p = float(min(1.0, ((1.0 + exceed) / (calib.mc_draws + 1)).max()))
    return TestResult(statistic=stat, reject=bool(stat > calib.cv), p_value=p, k=calib.k,
                      alpha=calib.alpha, calibration_id=calib.id, seed=seed)
