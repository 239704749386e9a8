"""Experiment configuration (TOML)."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from racecoach.fading import Group

PATH_KEYS = ("track", "vehicle", "mpc", "scoring", "fading", "drivers")


class ConfigError(ValueError):
    pass


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    """One protocol session: groups, subjects, trial counts, seeds and input files.

    ``paths`` maps any of ``track, vehicle, mpc, scoring, fading, drivers``
    to a file; missing entries fall back to the packaged defaults (and, for
    ``scoring``, to a fresh autonomy-only calibration lap).
    """

    groups: tuple[str, ...] = tuple(g.value for g in Group)
    subjects: int = 16
    pre_trials: int = 8
    train_trials: int = 25
    post_trials: int = 8
    seed: int = 0
    output: Path = Path("results")
    log_decimation: int = 0
    workers: int = 1
    paths: dict = field(default_factory=dict)
    mpc: dict = field(default_factory=dict)
    fading: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.groups:
            raise ConfigError("no groups configured")
        known = {g.value for g in Group}
        for g in self.groups:
            if g not in known:
                raise ConfigError(f"unknown group {g!r}; expected one of {sorted(known)}")
        if len(set(self.groups)) != len(self.groups):
            raise ConfigError("duplicate group")
        for name in ("subjects", "pre_trials", "train_trials", "post_trials", "workers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.log_decimation < 0:
            raise ConfigError("log_decimation must be non-negative")
        unknown = set(self.paths) - set(PATH_KEYS)
        if unknown:
            raise ConfigError(f"unknown path keys {sorted(unknown)}")

    @property
    def trials_per_subject(self) -> int:
        return self.pre_trials + self.train_trials + self.post_trials

    @property
    def expected_rows(self) -> int:
        return len(self.groups) * self.subjects * self.trials_per_subject

    def path(self, key: str) -> Path | None:
        value = self.paths.get(key)
        return Path(value) if value else None

    def check_output(self) -> Path:
        out = Path(self.output)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"output directory {out} is not writable")
        return out

    @classmethod
    def from_mapping(cls, data: dict, base: Path | None = None) -> "ExperimentConfig":
        data = dict(data)
        exp = dict(data.pop("experiment", {}))
        paths = dict(data.pop("paths", {}))
        mpc = dict(data.pop("mpc", {}))
        fading = dict(data.pop("fading", {}))
        if data:
            raise ConfigError(f"unknown sections {sorted(data)}")
        names = {f.name for f in fields(cls)} - {"paths", "mpc", "fading"}
        unknown = set(exp) - names
        if unknown:
            raise ConfigError(f"unknown [experiment] keys {sorted(unknown)}")
        if "groups" in exp:
            exp["groups"] = tuple(exp["groups"])
        base = base or Path.cwd()
        if "output" in exp:
            exp["output"] = _resolve(exp["output"], base)
        paths = {k: str(_resolve(v, base)) for k, v in paths.items() if v}
        return cls(paths=paths, mpc=mpc, fading=fading, **exp)


def _resolve(value, base: Path) -> Path:
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def load_config(path) -> ExperimentConfig:
    """Read an experiment TOML; relative paths resolve against its directory."""
    path = Path(path)
    return ExperimentConfig.from_mapping(read_toml(path), base=path.parent.resolve())
