"""Calibration artifacts and the on-disk store that holds them."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import MissingCalibration

FORMAT_VERSION = 1
KINDS = ("thin_tail", "equal_tail")
ENV_CALIBRATION_DIR = "SFATAIL_CALIBRATION_DIR"


@dataclass(frozen=True)
class CalibrationArtifact:
    """A critical value (and least-favorable weights for the equal-tail test).

    ``grid_points`` is the tail-index grid: the alternative weight grid for
    the thin-tail test, the support of ``lambda_masses`` for the equal-tail
    test.  ``seed`` and ``mc_draws`` regenerate the simulation behind ``cv``.
    """

    kind: str
    k: int
    alpha: float
    cv: float
    grid_points: tuple
    mc_draws: int
    seed: int
    lambda_masses: tuple | None = None
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown calibration kind {self.kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.cv > 0:
            raise ValueError("cv must be positive")
        if self.k < 3:
            raise ValueError("k must be at least 3")
        object.__setattr__(self, "grid_points", tuple(float(x) for x in self.grid_points))
        if self.kind == "equal_tail":
            if self.lambda_masses is None or len(self.lambda_masses) != len(self.grid_points):
                raise ValueError("equal_tail artifacts need one lambda mass per grid point")
            object.__setattr__(self, "lambda_masses", tuple(float(x) for x in self.lambda_masses))
        elif self.lambda_masses is not None:
            raise ValueError("thin_tail artifacts carry no lambda masses")

    @property
    def id(self) -> str:
        return f"{self.kind}:k={self.k}:alpha={self.alpha!r}:v{self.version}:seed={self.seed}"

    def to_dict(self) -> dict:
        out = {
            "version": self.version,
            "kind": self.kind,
            "k": self.k,
            "alpha": self.alpha,
            "grid_points": list(self.grid_points),
        }
        if self.kind == "equal_tail":
            out["lambda_masses"] = list(self.lambda_masses)
        out.update(cv=self.cv, mc_draws=self.mc_draws, seed=self.seed)
        return out

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips bit-exactly
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationArtifact":
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported calibration format version {d.get('version')!r}")
        return cls(
            kind=d["kind"],
            k=int(d["k"]),
            alpha=float(d["alpha"]),
            cv=float(d["cv"]),
            grid_points=tuple(d["grid_points"]),
            mc_draws=int(d["mc_draws"]),
            seed=int(d["seed"]),
            lambda_masses=tuple(d["lambda_masses"]) if "lambda_masses" in d else None,
            version=int(d["version"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "CalibrationArtifact":
        return cls.from_dict(json.loads(text))


def artifact_filename(kind: str, k: int, alpha: float, version: int = FORMAT_VERSION) -> str:
    return f"{kind}_k{k}_a{alpha!r}_v{version}.json"


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling file and rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def bundled_calibration_dir() -> Path:
    return Path(str(resources.files("sfatail") / "data" / "calibrations"))


class CalibrationStore:
    """Directory-backed lookup of artifacts keyed by (kind, k, alpha, version).

    Several directories may be given; the first one holding a match wins.
    """

    def __init__(self, *directories):
        if not directories:
            raise ValueError("at least one directory is required")
        self.directories = [Path(d) for d in directories]

    def path_for(self, kind, k, alpha, version=FORMAT_VERSION) -> Path:
        return self.directories[0] / artifact_filename(kind, k, alpha, version)

    def find(self, kind, k, alpha, version=FORMAT_VERSION) -> Path | None:
        name = artifact_filename(kind, k, alpha, version)
        for d in self.directories:
            if (d / name).is_file():
                return d / name
        return None

    def load(self, kind, k, alpha, version=FORMAT_VERSION) -> CalibrationArtifact:
        path = self.find(kind, k, alpha, version)
        if path is None:
            raise MissingCalibration(kind, k, alpha)
        return CalibrationArtifact.from_json(path.read_text(encoding="utf-8"))

    def save(self, artifact: CalibrationArtifact) -> Path:
        path = self.path_for(artifact.kind, artifact.k, artifact.alpha, artifact.version)
        path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write_text(path, artifact.to_json())
        return path

    def available(self):
        seen = {}
        for d in reversed(self.directories):
            for p in sorted(d.glob("*.json")):
                try:
                    a = CalibrationArtifact.from_json(p.read_text(encoding="utf-8"))
                except (ValueError, KeyError):
                    continue
                seen[(a.kind, a.k, a.alpha, a.version)] = a
        return [seen[key] for key in sorted(seen)]


def default_store(directory=None) -> CalibrationStore:
    """Store searching ``directory`` (or ``$SFATAIL_CALIBRATION_DIR``), then the bundled set."""
    dirs = []
    directory = directory or os.environ.get(ENV_CALIBRATION_DIR)
    if directory:
        dirs.append(Path(directory))
    dirs.append(bundled_calibration_dir())
    return CalibrationStore(*dirs)
