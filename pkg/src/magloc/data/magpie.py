"""Column-map driven ingestion of MagPie-style delimited recordings.

Each trial is one delimited text file.  A :class:`ColumnMap` names the
timestamp, magnetometer, accelerometer and ground-truth columns and their
units, so the same code reads the public dataset, its derivatives and the
normalized CSVs this package writes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from magloc.data.resample import median_rate, resample_align
from magloc.data.trial import TARGET_RATE, BuildingSet, Trial, size_class_for, trial_number
from magloc.errors import ConfigError, DataError, IngestError

log = logging.getLogger(__name__)

TIME_SCALE = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
MAG_SCALE = {"uT": 1.0, "nT": 1e-3, "mT": 1e3, "T": 1e6, "G": 100.0}
ACC_SCALE = {"m/s^2": 1.0, "g": 9.80665}
POS_SCALE = {"m": 1.0, "cm": 1e-2, "mm": 1e-3}

DEFAULT_EXCLUSIONS = (("Loomis", 8), ("Loomis", 9), ("Loomis", 10), ("Loomis", 11))


@dataclass(frozen=True)
class ColumnMap:
    """Where each logical field lives in a source file, and in which unit."""

    t: str = "t"
    mag_x: str = "mag_x"
    mag_y: str = "mag_y"
    mag_z: str = "mag_z"
    acc_x: str = "acc_x"
    acc_y: str = "acc_y"
    acc_z: str = "acc_z"
    pos_x: str = "pos_x"
    pos_y: str = "pos_y"
    pos_z: str | None = "pos_z"
    time_unit: str = "s"
    mag_unit: str = "uT"
    acc_unit: str = "m/s^2"
    pos_unit: str = "m"
    delimiter: str = ","
    pattern: str = "*.csv"

    def __post_init__(self):
        for unit, table in (
            (self.time_unit, TIME_SCALE),
            (self.mag_unit, MAG_SCALE),
            (self.acc_unit, ACC_SCALE),
            (self.pos_unit, POS_SCALE),
        ):
            if unit not in table:
                raise ConfigError(f"unknown unit {unit!r}; expected one of {sorted(table)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnMap":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown column map keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ColumnMap":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def required(self) -> list[tuple[str, str]]:
        keys = ["t", "mag_x", "mag_y", "mag_z", "acc_x", "acc_y", "acc_z", "pos_x", "pos_y"]
        return [(k, getattr(self, k)) for k in keys]


# Best-effort guess at the public MagPie layout; validate with `magloc inspect`
# against the downloaded files before trusting it.
MAGPIE_COLUMN_MAP = ColumnMap(
    t="timestamp",
    mag_x="magnetometer_x",
    mag_y="magnetometer_y",
    mag_z="magnetometer_z",
    acc_x="accelerometer_x",
    acc_y="accelerometer_y",
    acc_z="accelerometer_z",
    pos_x="ground_truth_x",
    pos_y="ground_truth_y",
    pos_z="ground_truth_z",
    time_unit="ms",
)


def read_header(path, delimiter: str = ",") -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [c.strip() for c in fh.readline().rstrip("\n\r").split(delimiter)]


def _fill_gaps(t: np.ndarray, a: np.ndarray, what: str) -> np.ndarray:
    """Interpolate NaN rows from finite ones (sensors logged on different clocks)."""
    out = a.copy()
    for j in range(a.shape[1]):
        ok = np.isfinite(a[:, j])
        if not ok.any():
            raise IngestError(f"column {what}[{j}] has no finite values")
        if not ok.all():
            out[:, j] = np.interp(t, t[ok], a[ok, j])
    return out


def read_trial(path, cmap: ColumnMap, building: str, trial_id: str, rate: float = TARGET_RATE) -> Trial:
    """Read one delimited file, convert units, sort by time and resample."""
    path = Path(path)
    header = read_header(path, cmap.delimiter)
    index = {name: i for i, name in enumerate(header)}
    for key, col in cmap.required():
        if col not in index:
            raise IngestError(f"{path.name}: missing column {col!r} (field {key})")
    raw = np.genfromtxt(path, delimiter=cmap.delimiter, skip_header=1, dtype=np.float64, ndmin=2)
    if raw.size == 0:
        raise IngestError(f"{path.name}: no data rows")

    def cols(*names):
        return np.column_stack([raw[:, index[n]] if n is not None else np.zeros(len(raw)) for n in names])

    t = raw[:, index[cmap.t]] * TIME_SCALE[cmap.time_unit]
    keep = np.isfinite(t)
    order = np.argsort(t[keep], kind="stable")
    t = t[keep][order]
    if np.any(np.diff(t) <= 0):
        raise IngestError(f"{path.name}: timestamps not strictly increasing after sorting (duplicates)")
    pos_z = cmap.pos_z if cmap.pos_z in index else None
    mag = cols(cmap.mag_x, cmap.mag_y, cmap.mag_z)[keep][order] * MAG_SCALE[cmap.mag_unit]
    acc = cols(cmap.acc_x, cmap.acc_y, cmap.acc_z)[keep][order] * ACC_SCALE[cmap.acc_unit]
    pos = cols(cmap.pos_x, cmap.pos_y, pos_z)[keep][order] * POS_SCALE[cmap.pos_unit]
    mag, acc, pos = (_fill_gaps(t, a, n) for a, n in ((mag, "mag"), (acc, "acc"), (pos, "pos")))

    source_rate = median_rate(t)
    trial = resample_align(Trial(building, trial_id, t, mag, acc, pos, rate=source_rate), rate)
    flags = []
    if abs(source_rate - rate) > 0.05 * rate:
        flags.append(f"source rate {source_rate:.2f} Hz deviates >5% from {rate:g} Hz")
    out_rate = median_rate(trial.t)
    if len(trial) > 1 and abs(out_rate - rate) > 0.05 * rate:
        flags.append(f"resampled rate {out_rate:.2f} Hz deviates >5%")
    return trial.replace(flags=tuple(flags))


def ingest_magpie(root, cmap: ColumnMap | None = None, building: str | None = None, rate: float = TARGET_RATE) -> BuildingSet:
    """Ingest every file under ``root`` matching the column map's pattern as one trial.

    Files that fail validation are skipped with a warning recorded on the
    returned set; a missing mapped column is a hard error because it means
    the column map does not fit the data at all.
    """
    cmap = cmap or ColumnMap()
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    building = building or root.name
    trials, warnings = [], []
    for path in sorted(root.rglob(cmap.pattern)):
        trial_id = path.relative_to(root).with_suffix("").as_posix()
        try:
            trials.append(read_trial(path, cmap, building, trial_id, rate))
        except IngestError as exc:
            if "missing column" in str(exc):
                raise
            msg = f"rejected trial {trial_id}: {exc}"
            log.warning(msg)
            warnings.append(msg)
    for tr in trials:
        for flag in tr.flags:
            warnings.append(f"trial {tr.trial_id}: {flag}")
    return BuildingSet(building, tuple(trials), size_class_for(building), warnings=tuple(warnings))


def ingest_tree(root, cmap: ColumnMap | None = None, rate: float = TARGET_RATE) -> dict[str, BuildingSet]:
    """One building per immediate subdirectory of ``root``."""
    root = Path(root)
    return {d.name: ingest_magpie(d, cmap, d.name, rate) for d in sorted(root.iterdir()) if d.is_dir()}


def _matches(trial: Trial, building: str, ident) -> bool:
    if trial.building.lower() != str(building).lower():
        return False
    if str(ident) == trial.trial_id:
        return True
    return isinstance(ident, int) and trial_number(trial.trial_id) == ident


def exclude_trials(bset: BuildingSet, exclusions=DEFAULT_EXCLUSIONS) -> BuildingSet:
    """Drop listed (building, trial) pairs; unknown entries only warn."""
    exclusions = [(b, int(i) if isinstance(i, str) and i.isdigit() else i) for b, i in exclusions]
    keep = [tr for tr in bset.trials if not any(_matches(tr, b, i) for b, i in exclusions)]
    warnings = []
    for b, i in exclusions:
        if b.lower() == bset.building.lower() and not any(_matches(tr, b, i) for tr in bset.trials):
            warnings.append(f"exclusion ({b}, {i}) matches no trial")
    if not keep and bset.trials:
        warnings.append(f"all trials of {bset.building} excluded")
    for w in warnings:
        log.warning(w)
    return bset.with_trials(keep, warnings)


def inspect_files(root, cmap: ColumnMap | None = None) -> list[dict]:
    """Schema and rate diagnostics for every file the column map would ingest."""
    cmap = cmap or ColumnMap()
    report = []
    for path in sorted(Path(root).rglob(cmap.pattern)):
        header = read_header(path, cmap.delimiter)
        entry = {
            "file": str(path),
            "columns": header,
            "missing": [f"{col} ({key})" for key, col in cmap.required() if col not in header],
        }
        if not entry["missing"]:
            try:
                raw = np.genfromtxt(path, delimiter=cmap.delimiter, skip_header=1, ndmin=2)
                t = np.sort(raw[:, header.index(cmap.t)]) * TIME_SCALE[cmap.time_unit]
                entry.update(rows=int(len(raw)), duration_s=float(t[-1] - t[0]), median_rate_hz=median_rate(t))
            except (ValueError, IndexError) as exc:
                entry["error"] = str(exc)
        report.append(entry)
    return report
