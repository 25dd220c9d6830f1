"""Tail-index tests for stochastic frontier residuals.

Self-normalized extreme-value tests of whether the noise in a composed
error has thin tails, and whether the inefficiency side of the error has a
heavier tail than the noise side.
"""
__version__ = "0.1.0"

from .artifacts import CalibrationArtifact, CalibrationStore, default_store
from .errors import (
    CalibrationDivergence,
    CalibrationMismatch,
    DegenerateTail,
    MissingCalibration,
    QuadratureFailure,
    RankDeficient,
    SfaTailError,
    ZeroVariance,
)
from .evt_core import (
    QuadratureConfig,
    gev_cdf,
    gev_log_pdf,
    joint_topk_log_density,
    log_normalized_density,
    normalized_density,
    sample_normalized,
    sample_topk,
    self_normalize,
)
from .frontier import (
    Dataset,
    Orientation,
    RegressionFit,
    ols_fit,
    residual_skewness,
    residual_tails,
    run_frontier_diagnostic,
)
from .mc_lab import (
    DistributionSpec,
    RejectionTable,
    ScenarioSpec,
    asymptotic_power_curve,
    parse_distribution,
    run_scenario,
    sample_distribution,
)
from .tail_tests import (
    LeastFavorableDistribution,
    TestResult,
    WeightGrid,
    calibrate_lfd,
    equal_tail_statistic,
    equal_tail_test,
    normal_family_left_test,
    simulate_critical_value,
    thin_tail_statistic,
    thin_tail_test,
    verify_size,
)
