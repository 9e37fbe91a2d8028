"""Rotation scenarios applied to trials before feature extraction.

Kinds:

``none``
    no perturbation (baseline).
``fixed_test``
    every test sample rotated by one fixed rotation; ``angle_deg`` applied
    about each axis listed in ``axes`` (composed as Euler angles).
``fixed_magnitude_both``
    every trial of both splits rotated by a constant rotation of magnitude
    ``sigma_deg`` about its own uniformly random axis.
``random_test``
    test trials follow random rotation schedules (N(0, sigma) knots every
    ``period_s`` seconds, linearly interpolated); training data untouched.
``random_both``
    independent schedules for every trial of both splits.

Magnetometer and accelerometer are always rotated together, sample by
sample; positions are never touched.  The rotation is applied directly to
the sensor readings (``mag' = R mag``).
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from magloc.data.trial import Trial
from magloc.errors import ConfigError
from magloc.geometry import RotationSchedule, quat_from_euler, rotate_vectors, rot_from_euler, Rotation, sample_schedule

log = logging.getLogger(__name__)

KINDS = ("none", "fixed_test", "fixed_magnitude_both", "random_test", "random_both")
TEST_ONLY = ("none", "fixed_test", "random_test")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts: sha256 of their '|'-joined text."""
    text = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little") >> 1


@dataclass(frozen=True)
class Scenario:
    kind: str = "none"
    sigma_deg: float = 0.0
    period_s: float = 1.0
    axes: tuple[str, ...] = ()
    angle_deg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma_deg < 0:
            raise ConfigError("sigma_deg must be >= 0")
        if self.period_s <= 0:
            raise ConfigError("period_s must be > 0")
        if self.kind == "fixed_test":
            if not self.axes:
                raise ConfigError("fixed_test needs at least one axis")
            if any(a not in ("x", "y", "z") for a in self.axes):
                raise ConfigError(f"axes must be drawn from x, y, z; got {self.axes}")

    @property
    def perturbs_train(self) -> bool:
        return self.kind not in TEST_ONLY

    @property
    def label(self) -> str:
        if self.kind == "fixed_test":
            return f"fixed_test_{''.join(self.axes)}{self.angle_deg:g}"
        if self.kind == "none":
            return "none"
        return f"{self.kind}_s{self.sigma_deg:g}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["axes"] = list(self.axes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"kind", "sigma_deg", "period_s", "axes", "angle_deg", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def fixed_rotation(self) -> Rotation:
        a = self.angle_deg
        return rot_from_euler(a if "x" in self.axes else 0.0, a if "y" in self.axes else 0.0, a if "z" in self.axes else 0.0)


@dataclass(frozen=True)
class PerturbedTrial(Trial):
    source_id: str = ""
    schedule: RotationSchedule | None = None
    fixed: Rotation | None = None


def rotate_trial(trial: Trial, quats, streams: Sequence[str] = ("mag", "acc"), **audit) -> PerturbedTrial:
    """Rotate the listed sensor streams sample-wise by ``quats`` ((N, 4) or (4,))."""
    changes = {name: rotate_vectors(quats, getattr(trial, name)) for name in streams}
    fields = dict(
        building=trial.building,
        trial_id=trial.trial_id,
        t=trial.t,
        mag=trial.mag,
        acc=trial.acc,
        pos=trial.pos,
        rate=trial.rate,
        device=trial.device,
        flags=trial.flags,
    )
    fields.update(changes)
    return PerturbedTrial(**fields, source_id=trial.trial_id, **audit)


def _untouched(trial: Trial) -> PerturbedTrial:
    return rotate_trial(trial, np.array([1.0, 0.0, 0.0, 0.0]), streams=())


def _perturb(trial: Trial, scenario: Scenario, split: str) -> PerturbedTrial:
    seed = derive_seed(scenario.seed, scenario.kind, split, trial.building, trial.trial_id)
    if scenario.kind == "fixed_test":
        r = scenario.fixed_rotation()
        return rotate_trial(trial, r.quaternion, fixed=r)
    if scenario.kind == "fixed_magnitude_both":
        if scenario.sigma_deg == 0:
            return _untouched(trial)
        rng = np.random.default_rng(seed)
        axis = rng.normal(size=3)
        r = Rotation.from_axis_angle(axis, scenario.sigma_deg)
        return rotate_trial(trial, r.quaternion, fixed=r)
    # random schedules
    if scenario.sigma_deg == 0:
        return _untouched(trial)
    tau = trial.t - trial.t[0]
    duration = max(float(tau[-1]), scenario.period_s)
    schedule = sample_schedule(scenario.sigma_deg, scenario.period_s, duration, seed)
    return rotate_trial(trial, quat_from_euler(schedule.angles_at(tau)), schedule=schedule)


def apply_scenario(train: Sequence[Trial], test: Sequence[Trial], scenario: Scenario):
    """Return ``(train', test')`` as lists of :class:`PerturbedTrial`."""
    if not train:
        log.warning("apply_scenario: empty train split passed through")
    if not test:
        log.warning("apply_scenario: empty test split passed through")
    if scenario.kind == "none":
        return [_untouched(t) for t in train], [_untouched(t) for t in test]
    new_test = [_perturb(t, scenario, "test") for t in test]
    if scenario.perturbs_train:
        new_train = [_perturb(t, scenario, "train") for t in train]
    else:
        new_train = [_untouched(t) for t in train]
    return new_train, new_test


def perturb_trials(trials: Sequence[Trial], scenario: Scenario, split: str = "test") -> list[PerturbedTrial]:
    """Perturb a single split as if it were ``split`` of ``scenario``."""
    if scenario.kind == "none" or (split == "train" and not scenario.perturbs_train):
        return [_untouched(t) for t in trials]
    return [_perturb(t, scenario, split) for t in trials]


def scenario_catalog(sigmas: Sequence[float], kinds: Sequence[str], master_seed: int = 0, period_s: float = 1.0) -> list[Scenario]:
    """Cross product kinds x sigmas, in that order, with seeds derived from the master seed."""
    out = []
    for kind in kinds:
        for sigma in sigmas:
            if sigma < 0:
                raise ConfigError(f"sigma must be >= 0, got {sigma}")
            index = len(out)
            out.append(Scenario(kind=kind, sigma_deg=float(sigma), period_s=period_s, seed=derive_seed(master_seed, index)))
    return out
