"""Trial and building containers plus the normalized CSV format."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from magloc.errors import DataError

log = logging.getLogger(__name__)

NORMALIZED_HEADER = ("t", "mag_x", "mag_y", "mag_z", "acc_x", "acc_y", "acc_z", "pos_x", "pos_y", "pos_z")
TARGET_RATE = 50.0

SIZE_CLASSES = {"csl": "small", "talbot": "medium", "loomis": "large"}


@dataclass(frozen=True)
class SampleRecord:
    t: float
    mag: tuple[float, float, float]
    acc: tuple[float, float, float]
    pos: tuple[float, float, float]


def _frozen(a, shape_tail) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.shape[1:] != shape_tail:
        raise DataError(f"expected array of shape (N, {shape_tail}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Trial:
    """One continuous recording, stored column-wise.

    ``mag`` is in microtesla and ``acc`` in m/s^2, both in the sensor
    frame; ``pos`` is the ground truth in meters (building frame).
    """

    building: str
    trial_id: str
    t: np.ndarray
    mag: np.ndarray
    acc: np.ndarray
    pos: np.ndarray
    rate: float = TARGET_RATE
    device: str = "handheld"
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, ()))
        for name in ("mag", "acc", "pos"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (3,)))
        n = len(self.t)
        if not (len(self.mag) == len(self.acc) == len(self.pos) == n):
            raise DataError(f"trial {self.trial_id}: channel lengths differ")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    @property
    def number(self) -> int | None:
        return trial_number(self.trial_id)

    def record(self, i: int) -> SampleRecord:
        return SampleRecord(float(self.t[i]), tuple(self.mag[i]), tuple(self.acc[i]), tuple(self.pos[i]))

    def records(self) -> Iterator[SampleRecord]:
        return (self.record(i) for i in range(len(self)))

    def replace(self, **changes) -> "Trial":
        fields = {
            "building": self.building,
            "trial_id": self.trial_id,
            "t": self.t,
            "mag": self.mag,
            "acc": self.acc,
            "pos": self.pos,
            "rate": self.rate,
            "device": self.device,
            "flags": self.flags,
        }
        fields.update(changes)
        return Trial(**fields)

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.building}/{self.trial_id}".encode())
        for a in (self.t, self.mag, self.acc, self.pos):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def trial_number(trial_id: str) -> int | None:
    """Last integer embedded in a trial id ("loomis/trial_8" -> 8)."""
    nums = re.findall(r"\d+", str(trial_id))
    return int(nums[-1]) if nums else None


@dataclass(frozen=True)
class BuildingSet:
    building: str
    trials: tuple[Trial, ...]
    size_class: str = "unknown"
    bbox: tuple[float, float, float, float] | None = None  # xmin, ymin, xmax, ymax
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        if self.bbox is None and self.trials:
            pos = np.concatenate([tr.pos[:, :2] for tr in self.trials])
            lo, hi = pos.min(axis=0), pos.max(axis=0)
            object.__setattr__(self, "bbox", (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))

    def __len__(self) -> int:
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def trial_ids(self) -> list[str]:
        return [tr.trial_id for tr in self.trials]

    @property
    def diagonal(self) -> float:
        xmin, ymin, xmax, ymax = self.bbox
        return float(np.hypot(xmax - xmin, ymax - ymin))

    def with_trials(self, trials, warnings=()) -> "BuildingSet":
        return BuildingSet(self.building, tuple(trials), self.size_class, self.bbox, self.warnings + tuple(warnings))

    def digest(self) -> str:
        h = hashlib.sha256(self.building.encode())
        for tr in self.trials:
            h.update(tr.digest().encode())
        return h.hexdigest()


def size_class_for(building: str) -> str:
    key = building.lower()
    if key.startswith("synthetic"):
        return "synthetic"
    return SIZE_CLASSES.get(key, "unknown")


def write_trial_csv(trial: Trial, path) -> None:
    """Write the normalized fixed-header CSV (17 significant digits, exact roundtrip)."""
    data = np.column_stack([trial.t, trial.mag, trial.acc, trial.pos])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, delimiter=",", header=",".join(NORMALIZED_HEADER), comments="", fmt="%.17g", encoding="utf-8")


def read_trial_csv(path, building: str, trial_id: str | None = None) -> Trial:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != NORMALIZED_HEADER:
        raise DataError(f"{path}: not a normalized trial file (header {header})")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Trial(building, trial_id or path.stem, data[:, 0], data[:, 1:4], data[:, 4:7], data[:, 7:10])


def write_building(bset: BuildingSet, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for tr in bset.trials:
        p = directory / f"{tr.trial_id.replace('/', '__')}.csv"
        write_trial_csv(tr, p)
        out.append(p)
    meta = directory / "building.json"
    meta.write_text(json.dumps({"building": bset.building, "size_class": bset.size_class, "bbox": list(bset.bbox) if bset.bbox else None}, sort_keys=True) + "\n", encoding="utf-8")
    out.append(meta)
    return out


def read_building(directory, building: str | None = None) -> BuildingSet:
    directory = Path(directory)
    building = building or directory.name
    files = sorted(directory.glob("*.csv"))
    trials = [read_trial_csv(p, building, p.stem.replace("__", "/")) for p in files]
    meta_path = directory / "building.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        bbox = tuple(meta["bbox"]) if meta.get("bbox") else None
        return BuildingSet(building, tuple(trials), meta.get("size_class", size_class_for(building)), bbox)
    return BuildingSet(building, tuple(trials), size_class_for(building))
