"""Composed-error generators and the Monte Carlo scenario runner."""
from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .artifacts import CalibrationArtifact, CalibrationStore, default_store
from .errors import CalibrationMismatch
from .evt_core import QuadratureConfig, sample_normalized, self_normalize
from .frontier import Dataset, ols_fit, residual_tails
from .tail_tests import (
    DEFAULT_GRID,
    LeastFavorableDistribution,
    WeightGrid,
    equal_tail_statistics,
    simulate_critical_value,
    thin_tail_statistics,
)

__all__ = [
    "DistributionSpec",
    "parse_distribution",
    "sample_distribution",
    "tail_index",
    "ScenarioSpec",
    "RejectionCell",
    "RejectionTable",
    "run_scenario",
    "run_scenarios",
    "load_scenarios",
    "load_preset",
    "PRESETS",
    "PowerCurve",
    "asymptotic_power_curve",
]

FAMILIES = {
    "normal": ("loc", "scale"),
    "laplace": ("loc", "scale"),
    "student_t": ("df",),
    "pareto": ("xi",),
    "fisher_f": ("dfnum", "dfden"),
    "half_normal": (),
    "half_laplace": (),
    "half_student_t": (),
    "sign_symmetrized": (),
}
_WRAPPERS = {"half_normal": "normal", "half_laplace": "laplace",
             "half_student_t": "student_t", "sign_symmetrized": None}
TESTS = ("thin_tail_right", "thin_tail_left_normal_family", "equal_tail")
ORIENTATIONS = ("minus", "plus")
PRESETS = ("table1", "table2", "table3", "table4")


@dataclass(frozen=True)
class DistributionSpec:
    """A distribution family with its parameters.

    Half and sign-symmetrized variants hold the underlying law in
    ``wrapped``.  Pareto is parameterized by its tail index, with survival
    ``x**(-1/xi)`` on ``x >= 1``.
    """

    family: str
    params: tuple = ()
    wrapped: "DistributionSpec | None" = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        need = FAMILIES[self.family]
        if len(self.params) != len(need):
            raise ValueError(f"{self.family} takes parameters {need}, got {self.params}")
        p = self.params
        if self.family in ("normal", "laplace") and not p[1] > 0:
            raise ValueError("scale must be positive")
        if self.family == "student_t" and not p[0] > 0:
            raise ValueError("degrees of freedom must be positive")
        if self.family == "pareto" and not 0 < p[0] < 1:
            raise ValueError("pareto tail index must lie in (0, 1)")
        if self.family == "fisher_f" and not (p[0] > 0 and p[1] > 0):
            raise ValueError("F degrees of freedom must be positive")
        if self.family in _WRAPPERS:
            if self.wrapped is None:
                raise ValueError(f"{self.family} needs a wrapped distribution")
            base = _WRAPPERS[self.family]
            if base is not None and self.wrapped.family != base:
                raise ValueError(f"{self.family} wraps {base}, not {self.wrapped.family}")
            if base is None and self.wrapped.family not in ("pareto", "fisher_f"):
                raise ValueError("sign_symmetrized wraps a positive law (pareto or fisher_f)")
        elif self.wrapped is not None:
            raise ValueError(f"{self.family} takes no wrapped distribution")

    @property
    def nonnegative(self) -> bool:
        return self.family in ("pareto", "fisher_f", "half_normal", "half_laplace",
                               "half_student_t")

    @property
    def label(self) -> str:
        def num(x):
            return f"{x:g}"
        fam, p = self.family, self.params
        if fam == "normal":
            return f"N({num(p[0])},{num(p[1])})"
        if fam == "laplace":
            return f"La({num(p[0])},{num(p[1])})"
        if fam == "student_t":
            return f"t({num(p[0])})"
        if fam == "pareto":
            return f"Pa({num(p[0])})"
        if fam == "fisher_f":
            return f"F({num(p[0])},{num(p[1])})"
        if fam == "sign_symmetrized":
            return "+-" + self.wrapped.label
        return "half-" + self.wrapped.label

    def to_config(self):
        return self.label


_SHORT = re.compile(r"^\s*(half-|\+-|±|-)?\s*([A-Za-z]+)\s*\(([^)]*)\)\s*$")
_SHORT_FAMILIES = {"n": "normal", "la": "laplace", "laplace": "laplace", "t": "student_t",
                   "pa": "pareto", "f": "fisher_f", "normal": "normal"}


def parse_distribution(text) -> DistributionSpec:
    """Parse shorthand such as ``N(0,1)``, ``half-t(2)``, ``+-Pa(0.5)``, ``-F(4,4)``.

    A leading ``-`` names a positive law that enters the composed error
    with a minus sign, so it parses to the plain positive law.  Mappings
    ``{"family": ..., "params": [...], "wrapped": ...}`` are accepted too.
    """
    if isinstance(text, DistributionSpec):
        return text
    if isinstance(text, dict):
        wrapped = text.get("wrapped")
        return DistributionSpec(text["family"], tuple(text.get("params", ())),
                                None if wrapped is None else parse_distribution(wrapped))
    m = _SHORT.match(str(text))
    if not m:
        raise ValueError(f"cannot parse distribution {text!r}")
    prefix, name, args = m.groups()
    family = _SHORT_FAMILIES.get(name.lower())
    if family is None:
        raise ValueError(f"unknown distribution family {name!r} in {text!r}")
    try:
        params = tuple(float(a) for a in args.split(",")) if args.strip() else ()
    except ValueError:
        raise ValueError(f"bad parameters in {text!r}") from None
    base = DistributionSpec(family, params)
    if prefix == "half-":
        if family not in ("normal", "laplace", "student_t"):
            raise ValueError(f"no half variant of {name!r}")
        return DistributionSpec("half_" + family, (), base)
    if prefix in ("+-", "±"):
        return DistributionSpec("sign_symmetrized", (), base)
    if prefix == "-" and not base.nonnegative:
        raise ValueError(f"'-' prefix needs a positive law, got {text!r}")
    return base


def sample_distribution(spec: DistributionSpec, n: int, rng) -> np.ndarray:
    """``n`` i.i.d. draws from ``spec``."""
    rng = np.random.default_rng(rng)
    fam, p = spec.family, spec.params
    if fam == "normal":
        return rng.normal(p[0], p[1], n)
    if fam == "laplace":
        return rng.laplace(p[0], p[1], n)
    if fam == "student_t":
        return rng.standard_t(p[0], n)
    if fam == "pareto":
        return rng.pareto(1.0 / p[0], n) + 1.0
    if fam == "fisher_f":
        return rng.f(p[0], p[1], n)
    if fam == "sign_symmetrized":
        x = sample_distribution(spec.wrapped, n, rng)
        return np.where(rng.random(n) < 0.5, -x, x)
    return np.abs(sample_distribution(spec.wrapped, n, rng))


def tail_index(spec: DistributionSpec) -> float:
    """Right-tail index of ``spec`` (0 for normal and Laplace type tails)."""
    fam = spec.family
    if fam in ("normal", "laplace"):
        return 0.0
    if fam == "student_t":
        return 1.0 / spec.params[0]
    if fam == "pareto":
        return spec.params[0]
    if fam == "fisher_f":
        return 2.0 / spec.params[1]
    return tail_index(spec.wrapped)


@dataclass(frozen=True)
class ScenarioSpec:
    """One simulation cell design.

    ``orientation`` is the sign with which the inefficiency enters the
    composed error: ``minus`` gives ``Z = W - U``, ``plus`` gives ``Z = W + U``.
    With ``covariates`` the error is embedded in ``Y = 1 + X2 + Z`` with
    standard normal ``X2`` and the test runs on OLS residuals.
    """

    noise: DistributionSpec
    inefficiency: DistributionSpec
    n: int
    k: int
    test: str = "thin_tail_right"
    covariates: bool = False
    orientation: str = "minus"
    alpha: float = 0.05
    name: str | None = None

    def __post_init__(self):
        if not self.inefficiency.nonnegative:
            raise ValueError(f"inefficiency must be nonnegative, got {self.inefficiency.label}")
        if self.test not in TESTS:
            raise ValueError(f"unknown test {self.test!r}; choose from {TESTS}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError("orientation must be 'minus' or 'plus'")
        if self.k < 3 or 2 * self.k > self.n:
            raise ValueError(f"need 3 <= k <= n/2 (n={self.n}, k={self.k})")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def scenario_id(self) -> str:
        if self.name:
            return self.name
        sign = "-" if self.orientation == "minus" else "+"
        cov = ";cov" if self.covariates else ""
        return f"{self.test}:W={self.noise.label};U={sign}{self.inefficiency.label}{cov}"

    @property
    def calibration_kind(self) -> str:
        return "equal_tail" if self.test == "equal_tail" else "thin_tail"


@dataclass(frozen=True)
class RejectionCell:
    scenario: str
    n: int
    k: int
    rate: float
    se: float
    reps: int
    seed: int


@dataclass
class RejectionTable:
    cells: list = field(default_factory=list)

    COLUMNS = ("scenario", "n", "k", "rate", "se", "reps", "seed")

    def __getitem__(self, key):
        scenario, n, k = key
        for c in self.cells:
            if (c.scenario, c.n, c.k) == (scenario, n, k):
                return c
        raise KeyError(key)

    def __len__(self):
        return len(self.cells)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for c in self.cells:
            w.writerow([c.scenario, c.n, c.k, f"{c.rate:.6f}", f"{c.se:.6f}", c.reps, c.seed])
        return buf.getvalue()


def _substream(seed: int, rep: int, component: int):
    # disjoint streams per (replication, component); U, W, X never share draws
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, component)))


def _composed_error(s: ScenarioSpec, seed: int, rep: int) -> np.ndarray:
    u = sample_distribution(s.inefficiency, s.n, _substream(seed, rep, 0))
    w = sample_distribution(s.noise, s.n, _substream(seed, rep, 1))
    return w - u if s.orientation == "minus" else w + u


def _replication_tails(s: ScenarioSpec, seed: int, rep: int):
    z = _composed_error(s, seed, rep)
    if s.covariates:
        x2 = _substream(seed, rep, 2).standard_normal(s.n)
        design = np.column_stack([np.ones(s.n), x2])
        z = ols_fit(Dataset(design @ np.ones(2) + z, design)).residuals
    # after orienting, the upper tail is the noise side and the lower tail carries U
    return residual_tails(z, "production" if s.orientation == "minus" else "cost", s.k)


def _load_calibration(s: ScenarioSpec, calibrations) -> CalibrationArtifact:
    if isinstance(calibrations, CalibrationArtifact):
        calib = calibrations
    else:
        store = calibrations if isinstance(calibrations, CalibrationStore) else default_store(calibrations)
        calib = store.load(s.calibration_kind, s.k, s.alpha)
    if calib.kind != s.calibration_kind or calib.k != s.k:
        raise CalibrationMismatch(
            f"scenario needs {s.calibration_kind} at k={s.k}, got {calib.kind} at k={calib.k}")
    return calib


def run_scenario(s: ScenarioSpec, replications: int = 1000, calibrations=None, seed: int = 0,
                 q: QuadratureConfig | None = None) -> RejectionCell:
    """Rejection frequency of ``s.test`` over ``replications`` simulated samples.

    ``calibrations`` is an artifact, a :class:`CalibrationStore`, a
    directory, or ``None`` for the default store.  Replication ``r`` draws
    from substreams derived from ``(seed, r)`` only, so results do not depend
    on batching or on the other cells of a table.
    """
    if replications < 1:
        raise ValueError("replications must be positive")
    calib = _load_calibration(s, calibrations)
    grid = WeightGrid(calib.grid_points, tuple(np.full(len(calib.grid_points),
                                                       1.0 / len(calib.grid_points))))
    upper = np.empty((replications, s.k))
    lower = np.empty((replications, s.k))
    for r in range(replications):
        upper[r], lower[r] = _replication_tails(s, seed, r)
    if s.test == "thin_tail_right":
        stats = thin_tail_statistics(self_normalize(upper), grid, q)
    elif s.test == "thin_tail_left_normal_family":
        stats = thin_tail_statistics(self_normalize(lower), grid, q)
    else:
        lfd = LeastFavorableDistribution(WeightGrid(calib.grid_points, calib.lambda_masses),
                                         calib.cv)
        stats = equal_tail_statistics(self_normalize(lower), self_normalize(upper), lfd, None, q)
    rate = float(np.mean(stats > calib.cv))
    se = math.sqrt(rate * (1 - rate) / replications)
    return RejectionCell(s.scenario_id, s.n, s.k, rate, se, replications, seed)


def run_scenarios(scenarios, replications: int = 1000, calibrations=None, seed: int = 0,
                  q: QuadratureConfig | None = None, progress=None) -> RejectionTable:
    store = calibrations
    if not isinstance(store, (CalibrationStore, CalibrationArtifact)):
        store = default_store(calibrations)
    table = RejectionTable()
    for s in scenarios:
        table.cells.append(run_scenario(s, replications, store, seed, q))
        if progress is not None:
            progress(table.cells[-1])
    return table


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def load_scenarios(config) -> tuple[list[ScenarioSpec], dict]:
    """Expand a declarative config into scenario cells.

    ``config`` is a mapping (or JSON text / path) with a ``scenarios`` list.
    Each entry names ``noise`` and ``inefficiency`` (shorthand or mapping),
    ``n`` and ``k`` (scalars or lists, expanded as a grid), and optionally
    ``test``, ``covariates``, ``orientation``, ``alpha`` and ``name``.
    Top-level ``replications`` and ``seed`` are returned as defaults.
    """
    if isinstance(config, (str, Path)):
        path = Path(config)
        config = json.loads(path.read_text(encoding="utf-8") if path.is_file() else str(config))
    defaults = {key: config[key] for key in ("replications", "seed") if key in config}
    base = config.get("defaults", {})
    known = {"noise", "inefficiency", "n", "k", "test", "covariates", "orientation",
             "alpha", "name"}
    out = []
    for i, entry in enumerate(config["scenarios"]):
        merged = {**base, **entry}
        unknown = set(merged) - known
        if unknown:
            raise ValueError(f"scenario {i}: unknown keys {sorted(unknown)}")
        for n in _as_list(merged["n"]):
            for k in _as_list(merged["k"]):
                out.append(ScenarioSpec(
                    noise=parse_distribution(merged["noise"]),
                    inefficiency=parse_distribution(merged["inefficiency"]),
                    n=int(n), k=int(k),
                    test=merged.get("test", "thin_tail_right"),
                    covariates=bool(merged.get("covariates", False)),
                    orientation=merged.get("orientation", "minus"),
                    alpha=float(merged.get("alpha", 0.05)),
                    name=merged.get("name")))
    return out, defaults


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(str(resources.files("sfatail") / "presets" / f"{name}.json"))


def load_preset(name: str):
    return load_scenarios(json.loads(preset_path(name).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class PowerCurve:
    k: int
    xi: np.ndarray
    power: np.ndarray
    se: np.ndarray
    cv: float
    draws: int


def asymptotic_power_curve(k: int, xi_grid, M: int = 10_000, alpha: float = 0.05,
                           w: WeightGrid = DEFAULT_GRID, rng=None, *,
                           calibration: CalibrationArtifact | None = None,
                           q: QuadratureConfig | None = None) -> PowerCurve:
    """Rejection frequency of the thin-tail test under the limiting law at each ``xi``.

    The critical value comes from ``calibration`` when given, otherwise
    from ``M`` null draws on a stream independent of the power draws.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    xi = np.asarray(xi_grid, dtype=float)
    if xi.ndim != 1 or np.any(xi < 0) or np.any(xi > 0.99):
        raise ValueError("xi grid must lie within [0, 0.99]")
    if isinstance(rng, np.random.Generator):
        rng = int(rng.integers(2**63))
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    cv_seq, draw_seq = seq.spawn(2)
    if calibration is not None:
        if calibration.kind != "thin_tail" or calibration.k != k:
            raise CalibrationMismatch("power curve needs a thin_tail calibration at the same k")
        cv = calibration.cv
        w = WeightGrid(calibration.grid_points,
                       tuple(np.full(len(calibration.grid_points),
                                     1.0 / len(calibration.grid_points))))
    else:
        cv = simulate_critical_value(k, alpha, w, M, np.random.default_rng(cv_seq), q)
    power = np.empty(xi.size)
    for i, (x, s) in enumerate(zip(xi, draw_seq.spawn(xi.size))):
        stats = thin_tail_statistics(sample_normalized(x, k, np.random.default_rng(s), size=M), w, q)
        power[i] = np.mean(stats > cv)
    se = np.sqrt(power * (1 - power) / M)
    return PowerCurve(k, xi, power, se, cv, M)
