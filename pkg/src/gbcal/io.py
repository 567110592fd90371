"""CSV ingestion, the line-oriented config format and report writers."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .basis import Dataset, GbcalError


class ConfigError(GbcalError):
    pass


def load_csv(path, outcome: str, treatment: str, covariates: Sequence[str],
             missing: Optional[str] = None) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Covariate cells may be empty only where the missingness column is 0.
    Errors name the offending (1-based, header excluded) row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise GbcalError(f"{path}: empty file") from None
        cols = {name: i for i, name in enumerate(header)}
        wanted = [outcome, treatment, *covariates] + ([missing] if missing else [])
        absent = [c for c in wanted if c not in cols]
        if absent:
            raise GbcalError(f"{path}: missing column(s) {absent}")
        Y, A, X, R = [], [], [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue

            def num(name, allow_empty=False):
                cell = row[cols[name]].strip() if cols[name] < len(row) else ""
                if cell == "" and allow_empty:
                    return math.nan
                try:
                    return float(cell)
                except ValueError:
                    raise GbcalError(f"{path}: row {rownum}, column {name!r}: "
                                     f"cannot parse {cell!r} as a number") from None

            a = num(treatment)
            if a not in (0.0, 1.0):
                raise GbcalError(f"{path}: row {rownum}, column {treatment!r}: "
                                 f"treatment must be 0 or 1, got {row[cols[treatment]]!r}")
            r = None
            if missing:
                r = num(missing)
                if r not in (0.0, 1.0):
                    raise GbcalError(f"{path}: row {rownum}, column {missing!r}: "
                                     "missingness indicator must be 0 or 1")
            xs = [num(c, allow_empty=(r == 0.0)) for c in covariates]
            Y.append(num(outcome))
            A.append(a)
            X.append(xs)
            R.append(r)
    if not Y:
        raise GbcalError(f"{path}: no data rows")
    return Dataset(np.array(Y), np.array(A), np.array(X, dtype=float).reshape(len(Y), -1),
                   np.array(R, dtype=float) if missing else None, tuple(covariates))


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def fmt(v) -> str:
    """Machine CSV cell: floats with 17 significant digits, None as empty."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


# ---------------------------------------------------------------------------
# config file

@dataclass(frozen=True)
class DataSection:
    path: str = ""
    outcome: str = "Y"
    treatment: str = "A"
    covariates: Tuple[str, ...] = ()
    missing: str = ""
    squares: bool = False
    interactions: bool = False
    standardize: bool = True
    weighting: str = "cbps"
    rcal_lambda: float = 0.05


@dataclass(frozen=True)
class PriorsSection:
    lambda_shape: float = 0.01
    lambda_rate: float = 0.1
    theta_mean: float = 0.0
    theta_sd: float = 100.0


@dataclass(frozen=True)
class McmcSection:
    draws: int = 2000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    backend: str = "metropolis"
    omega_grid: Tuple[float, ...] = (0.2, 0.5, 1.0, 1.5)
    omega: float = 0.0  # 0 = select by PCIC
    criterion: str = "loss"
    level: float = 0.95


@dataclass(frozen=True)
class StudySection:
    scenario: str = "a"
    n: int = 500
    replications: int = 500
    adjustment: str = "confounders"
    methods: Tuple[str, ...] = ("logit", "cbps", "rcal-cv", "brcal-pcic")
    tau0: float = 0.152
    seed: int = 20240101
    draws: int = 1000
    burn_in: int = 1000
    workers: int = 0  # 0 = GBCAL_THREADS or 1
    oracle_m: int = 10_000_000


@dataclass(frozen=True)
class Config:
    data: DataSection = DataSection()
    priors: PriorsSection = PriorsSection()
    mcmc: McmcSection = McmcSection()
    study: StudySection = StudySection()
    source_dir: str = field(default="", compare=False)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and self.source_dir:
            p = Path(self.source_dir) / p
        return p


_SECTIONS = ("data", "priors", "mcmc", "study")


def _convert(value: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            items = [v.strip() for v in value.split(",") if v.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(v) for v in items)
            return tuple(items)
        return value.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {value!r}") from None


def parse_config(text: str, source_dir: str = "") -> Config:
    """Parse ``key = value`` lines grouped in ``[data]``, ``[priors]``,
    ``[mcmc]`` and ``[study]`` sections.  Unknown sections or keys are errors.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
    for name in _SECTIONS:
        cls = type(getattr(Config(), name))
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {}
        if cp.has_section(name):
            for key, value in cp.items(name):
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{name}]")
                kw[key] = _convert(value, getattr(defaults, key), f"[{name}] {key}")
        sections[name] = cls(**kw)
    return Config(**sections, source_dir=source_dir)


def load_config(path) -> Config:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path.parent))


def serialize_config(cfg: Config) -> str:
    out = io.StringIO()
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        out.write(f"[{name}]\n")
        for f in dataclasses.fields(sec):
            v = getattr(sec, f.name)
            if isinstance(v, tuple):
                s = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            out.write(f"{f.name} = {s}\n")
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


def write_manifest(path, cfg: Config, command: str, params: dict,
                   started: datetime) -> None:
    from . import __version__

    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "parameters": params,
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started_utc": started.isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def smoke_dataset_path() -> Path:
    return Path(__file__).parent / "data" / "smoke_a200.csv"

