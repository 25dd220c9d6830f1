"""Command-line entry point: ``sfatail {calibrate,test,simulate,density,power}``.

Exit codes: 0 success, 2 usage error, 3 data or I/O error, 4 numeric or
calibration failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import CalibrationStore, atomic_write_text, default_store
from .errors import (
    CalibrationDivergence,
    CalibrationMismatch,
    MissingCalibration,
    QuadratureFailure,
    SfaTailError,
)
from .evt_core import K_CAP, log_normalized_density
from .frontier import Dataset, format_p_value, run_frontier_diagnostic
from .mc_lab import PRESETS, asymptotic_power_curve, load_preset, load_scenarios, run_scenarios
from .tail_tests import WeightGrid, equal_tail_artifact, thin_tail_artifacts

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(SfaTailError):
    pass


@dataclass
class RunManifest:
    command: list
    seed: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    calibrations: list = field(default_factory=list)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _write_output(path, text: str, manifest: RunManifest):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    atomic_write_text(path, text)
    manifest.outputs[str(path)] = _sha256(text.encode("utf-8"))


def _write_manifest(manifest: RunManifest, path):
    if path is not None:
        atomic_write_text(path, manifest.to_json())


def _manifest_path(args, default):
    if args.manifest:
        return args.manifest
    return default


def _int_list(text):
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text):
    try:
        out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _alpha_list(text):
    out = _float_list(text)
    if any(not 0 < a < 1 for a in out):
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return out


def _store(args) -> CalibrationStore:
    return default_store(getattr(args, "calibration_dir", None))


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(args, parser) -> int:
    if any(k < 3 for k in args.k):
        parser.error("k must be at least 3")
    out_dir = Path(args.output)
    manifest = RunManifest(command=sys.argv[:], seed=args.seed)
    artifacts = []
    if args.kind == "thin":
        draws = args.draws or 10_000
        for k in args.k:
            artifacts += thin_tail_artifacts(k, tuple(args.alpha), WeightGrid.uniform(args.grid),
                                             draws, args.seed)
    else:
        draws = args.draws or 10_000
        for k in args.k:
            for a in args.alpha:
                try:
                    artifacts.append(equal_tail_artifact(
                        k, a, draws, args.iterations, args.kappa, args.seed,
                        grid=WeightGrid.uniform(args.grid)))
                except CalibrationDivergence as exc:
                    raise CalibrationDivergence(
                        f"k={k}, alpha={a}: {exc}") from None
    store = CalibrationStore(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for a in artifacts:
        path = store.save(a)
        manifest.outputs[str(path)] = _sha256(path.read_bytes())
        manifest.calibrations.append(a.id)
        print(path)
    _write_manifest(manifest, _manifest_path(args, out_dir / f"calibrate-{args.kind}.manifest"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# test
# ---------------------------------------------------------------------------

def read_csv_dataset(path, response: str, design: list, group: str | None) -> tuple[Dataset, bytes]:
    """Read a dataset; the constant column is prepended to ``design``."""
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 text ({exc})") from None
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    wanted = [response, *design] + ([group] if group else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}; header has {header}")
    idx = {c: header.index(c) for c in wanted}
    y, X, g = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
        vals = []
        for c in [response, *design]:
            cell = row[idx[c]].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {lineno}, column {c!r}: "
                                f"cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {lineno}, column {c!r}: non-finite value {cell!r}")
            vals.append(v)
        y.append(vals[0])
        X.append([1.0, *vals[1:]])
        if group:
            g.append(row[idx[group]].strip())
    if not y:
        raise DataError(f"{path}: no data rows")
    groups = None
    if group:
        groups = np.array(g, dtype=object)
        # numeric group keys sort numerically
        try:
            nums = np.array([float(x) for x in g])
            if np.all(nums == np.round(nums)):
                groups = nums.astype(np.int64)
        except ValueError:
            pass
    return Dataset(np.array(y), np.array(X), groups), raw


def cmd_test(args, parser) -> int:
    if any(k < 3 for k in args.k):
        parser.error("k must be at least 3")
    tails = {"both": ("left", "right"), "left": ("left",), "right": ("right",)}[args.tails]
    data, raw = read_csv_dataset(args.input, args.response, args.design, args.group)
    store = _store(args)
    calibs = {k: store.load("thin_tail", k, args.alpha) for k in args.k}
    manifest = RunManifest(command=sys.argv[:], seed=args.seed,
                           inputs={str(args.input): _sha256(raw)},
                           calibrations=[calibs[k].id for k in sorted(calibs)])
    rows = run_frontier_diagnostic(data, args.orientation, args.k, calibs, args.seed,
                                   alpha=args.alpha, tails=tails)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "k", "tail", "statistic", "p_value", "reject"])
    failed = 0
    for r in rows:
        group = "" if r.group is None else r.group
        if r.error is not None:
            failed += 1
            print(f"group {group!s}, k={r.k}, {r.tail} tail: {r.error}", file=sys.stderr)
            w.writerow([group, r.k, r.tail, "", "", ""])
            continue
        p = format_p_value(r.p_value, censor=True, digits=4) if args.censor else repr(r.p_value)
        w.writerow([group, r.k, r.tail, repr(r.statistic), p, str(r.reject).lower()])
    _write_output(args.output, buf.getvalue(), manifest)
    if args.output:
        _write_manifest(manifest, _manifest_path(args, f"{args.output}.manifest.json"))
    if failed and failed == len(rows):
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args, parser) -> int:
    if bool(args.preset) == bool(args.config):
        parser.error("give exactly one of --preset or --config")
    inputs = {}
    if args.preset:
        scenarios, defaults = load_preset(args.preset)
    else:
        raw = Path(args.config).read_bytes()
        inputs[str(args.config)] = _sha256(raw)
        try:
            scenarios, defaults = load_scenarios(json.loads(raw.decode("utf-8")))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{args.config}: invalid scenario config ({exc})") from None
    reps = args.reps or defaults.get("replications", 1000)
    seed = args.seed if args.seed is not None else defaults.get("seed", 0)
    if args.n:
        scenarios = [s for s in scenarios if s.n in args.n]
    if args.k:
        scenarios = [s for s in scenarios if s.k in args.k]
    store = _store(args)
    needed = sorted({(s.calibration_kind, s.k, s.alpha) for s in scenarios})
    calib_ids = [store.load(*key).id for key in needed]
    manifest = RunManifest(command=sys.argv[:], seed=seed, inputs=inputs, calibrations=calib_ids)

    def progress(cell):
        if not args.quiet:
            print(f"{cell.scenario} n={cell.n} k={cell.k}: {cell.rate:.3f}", file=sys.stderr)

    table = run_scenarios(scenarios, reps, store, seed, progress=progress)
    _write_output(args.output, table.to_csv(), manifest)
    if args.output:
        _write_manifest(manifest, _manifest_path(args, f"{args.output}.manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# density / power
# ---------------------------------------------------------------------------

def cmd_density(args, parser) -> int:
    k = args.k
    if k < 3:
        parser.error("k must be at least 3")
    if k > K_CAP and not args.log:
        parser.error(f"k > {K_CAP}: use --log")
    vectors = args.v
    if not vectors:
        parser.error("--v is required")
    xis = args.xi
    if any(x < 0 or not math.isfinite(x) for x in xis):
        parser.error("xi must be finite and nonnegative")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["xi", "vstar", "log_density" if args.log else "density"])
    for v in vectors:
        if len(v) == k - 2:
            v = [1.0, *v, 0.0]
        if len(v) != k:
            parser.error(f"--v needs {k - 2} interior values or all {k} entries")
        try:
            out = log_normalized_density(xis, np.array(v))
        except ValueError as exc:
            parser.error(str(exc))
        for x, d in zip(xis, np.atleast_1d(out)):
            val = d if args.log else math.exp(d)
            w.writerow([f"{x:g}", ";".join(f"{e:g}" for e in v), f"{val:.{args.digits}g}"])
    manifest = RunManifest(command=sys.argv[:])
    _write_output(args.output, buf.getvalue(), manifest)
    if args.output:
        _write_manifest(manifest, _manifest_path(args, f"{args.output}.manifest.json"))
    return EXIT_OK


def cmd_power(args, parser) -> int:
    if any(k < 3 for k in args.k):
        parser.error("k must be at least 3")
    if args.draws < 1000:
        parser.error("--draws must be at least 1000")
    xi = np.round(np.arange(0.0, 0.99 + 1e-9, args.step), 10) if args.xi is None else np.array(args.xi)
    if np.any(xi < 0) or np.any(xi > 0.99):
        parser.error("xi grid must lie within [0, 0.99]")
    manifest = RunManifest(command=sys.argv[:], seed=args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "xi", "power", "se", "draws"])
    seeds = np.random.SeedSequence(args.seed).spawn(len(args.k))
    for k, ss in zip(args.k, seeds):
        curve = asymptotic_power_curve(k, xi, args.draws, args.alpha, rng=ss)
        for x, p, se in zip(curve.xi, curve.power, curve.se):
            w.writerow([k, f"{x:g}", f"{p:.6f}", f"{se:.6f}", curve.draws])
    _write_output(args.output, buf.getvalue(), manifest)
    if args.output:
        _write_manifest(manifest, _manifest_path(args, f"{args.output}.manifest.json"))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfatail", description="Tail-index tests for stochastic frontier residuals.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=None, output=True):
        sp.add_argument("--seed", type=int, default=seed_default)
        if output:
            sp.add_argument("--output", "-o", help="output path (default: stdout)")
        sp.add_argument("--manifest", help="run manifest path (default: next to the output)")

    c = sub.add_parser("calibrate", help="simulate critical values and least-favorable weights")
    c.add_argument("--kind", choices=("thin", "equal"), required=True)
    c.add_argument("--k", type=_int_list, required=True)
    c.add_argument("--alpha", type=_alpha_list, default=[0.05])
    c.add_argument("--draws", "-N", type=int, help="Monte Carlo draws (default 10000)")
    c.add_argument("--iterations", type=int, default=500)
    c.add_argument("--kappa", type=float, default=2.0)
    c.add_argument("--grid", type=int, default=50, help="grid points on [0, 0.99]")
    c.add_argument("--output", "-o", required=True, help="calibration directory")
    common(c, seed_default=0, output=False)

    t = sub.add_parser("test", help="thin-tail tests on OLS residual tails, per group")
    t.add_argument("--input", "-i", required=True)
    t.add_argument("--response", required=True)
    t.add_argument("--design", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   default=[], help="comma-separated regressors (a constant is added)")
    t.add_argument("--group")
    t.add_argument("--orientation", choices=("production", "cost"), default="production")
    t.add_argument("--k", type=_int_list, default=[25, 50, 75, 100])
    t.add_argument("--tails", choices=("both", "left", "right"), default="both")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--calibration-dir")
    t.add_argument("--censor", action="store_true", help="print p-values above 0.1 as >0.1")
    common(t)

    s = sub.add_parser("simulate", help="Monte Carlo rejection tables")
    s.add_argument("--preset", choices=PRESETS)
    s.add_argument("--config")
    s.add_argument("--reps", type=int)
    s.add_argument("--n", type=_int_list, help="restrict to these sample sizes")
    s.add_argument("--k", type=_int_list, help="restrict to these tail sizes")
    s.add_argument("--calibration-dir")
    s.add_argument("--quiet", "-q", action="store_true")
    common(s)

    d = sub.add_parser("density", help="density of the self-normalized tail")
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--xi", type=_float_list, required=True)
    d.add_argument("--v", type=_float_list, action="append",
                   help="interior entries (k-2 values) or the full vector; repeatable")
    d.add_argument("--log", action="store_true")
    d.add_argument("--digits", type=int, default=6)
    common(d, output=True)

    w = sub.add_parser("power", help="asymptotic power curve of the thin-tail test")
    w.add_argument("--k", type=_int_list, required=True)
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--draws", type=int, default=10_000)
    w.add_argument("--xi", type=_float_list)
    w.add_argument("--step", type=float, default=0.05)
    common(w, seed_default=0)
    return p


COMMANDS = {"calibrate": cmd_calibrate, "test": cmd_test, "simulate": cmd_simulate,
            "density": cmd_density, "power": cmd_power}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        return COMMANDS[args.command](args, sub)
    except (MissingCalibration, CalibrationMismatch, CalibrationDivergence,
            QuadratureFailure, ArithmeticError) as exc:
        print(f"sfatail: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"sfatail: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
