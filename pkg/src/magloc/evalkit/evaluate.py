"""Scenario evaluation and sigma sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence


from magloc.data.trial import Trial
from magloc.errors import ConfigError, DataError
from magloc.evalkit.metrics import error_summary, mae
from magloc.evalkit.threshold import ThresholdResult, find_threshold
from magloc.features import DEFAULT_GRAVITY_ALPHA, WINDOW, windows_for
from magloc.magnet import Model
from magloc.perturb import TEST_ONLY, Scenario, perturb_trials, scenario_catalog

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    building: str
    mode: str
    scenario: dict
    mae: float
    windows: int
    median: float
    p90: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    model: Model,
    test_trials: Sequence[Trial],
    scenario: Scenario | None = None,
    stride: int = 1,
    mode: str | None = None,
    per_coordinate: bool = False,
    window: int = WINDOW,
    gravity_alpha: float = DEFAULT_GRAVITY_ALPHA,
) -> EvalReport:
    """Perturb the test trials, re-extract windows in the model's mode and score them."""
    scenario = scenario or Scenario()
    if model.mode is None:
        raise ConfigError("model has no input mode; was it trained?")
    if mode is not None and mode != model.mode:
        raise ConfigError(f"mode mismatch: windows are {mode!r} but the model was trained on {model.mode!r}")
    trials = perturb_trials(test_trials, scenario, "test")
    ws = windows_for(trials, model.mode, window, stride, gravity_alpha)
    if len(ws) == 0:
        raise DataError("no test windows")
    pred = model.predict(ws.x)
    summary = error_summary(pred, ws.y)
    building = test_trials[0].building if test_trials else ""
    return EvalReport(building, model.mode, scenario.to_dict(), mae(pred, ws.y, per_coordinate), len(ws), summary["median"], summary["p90"])


def series_name(mode: str, variant: str) -> str:
    return f"{'3D' if mode == 'raw3d' else '2D'}-{variant}"


@dataclass
class SweepResult:
    kind: str
    building: str
    sigmas: list[float]
    series: dict[str, list[float]] = field(default_factory=dict)
    flags: dict[str, list[str]] = field(default_factory=dict)
    failed: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for name, values in self.series.items():
            if len(values) != len(self.sigmas):
                raise DataError(f"series {name} has {len(values)} points for {len(self.sigmas)} sigmas")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "building": self.building,
            "sigmas": list(self.sigmas),
            "series": {k: [None if not math.isfinite(v) else v for v in vs] for k, vs in self.series.items()},
            "flags": self.flags,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        # JSON written with sorted keys loses insertion order; restore 3D first
        names = sorted(d["series"], key=lambda k: (not k.startswith("3D"), k))
        series = {k: [float("nan") if v is None else float(v) for v in d["series"][k]] for k in names}
        return cls(d["kind"], d["building"], [float(s) for s in d["sigmas"]], series, d.get("flags", {}), d.get("failed", []))

    @property
    def modes(self) -> list[str]:
        return sorted({"raw3d" if k.startswith("3D") else "inv2d" for k in self.series}, reverse=True)

    def pairs(self) -> list[tuple[str, str]]:
        """(3D series, 2D series) name pairs sharing a variant."""
        out = []
        for name in self.series:
            if name.startswith("3D-") and f"2D-{name[3:]}" in self.series:
                out.append((name, f"2D-{name[3:]}"))
        return out

    def threshold(self, pair: tuple[str, str] | None = None) -> ThresholdResult:
        """Threshold angle for a (3D, 2D) series pair; the first pair by default."""
        pairs = self.pairs()
        if pair is None:
            if not pairs:
                raise ConfigError("sweep has no matching 3D/2D series pair")
            pair = pairs[0]
        a, b = pair
        return find_threshold(self.sigmas, self.series[a], self.series[b], self.building)


TrainFn = Callable[[str, str, Sequence[Trial], Sequence[Trial]], Model]


def sweep(
    train_fn: TrainFn,
    train_trials: Sequence[Trial],
    val_trials: Sequence[Trial],
    test_trials: Sequence[Trial],
    sigmas: Sequence[float],
    kind: str = "random_test",
    modes: Sequence[str] = ("raw3d", "inv2d"),
    variants: Sequence[str] = ("S",),
    master_seed: int = 0,
    eval_stride: int = 1,
    period_s: float = 1.0,
    replicate_invariant: bool = False,
    building: str = "",
    jobs: int = 1,
) -> SweepResult:
    """MAE as a function of the rotation scale for every (mode, variant).

    Test-only kinds train one unperturbed model per (mode, variant) and
    reuse it across the grid; kinds that perturb training data retrain at
    every grid point.  With ``replicate_invariant`` the inv2d series is
    evaluated at the first grid point only and copied, flagged as such.
    A failing grid point is recorded and the sweep continues.  ``jobs``
    runs up to that many (mode, variant) series concurrently; results do
    not depend on it.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ConfigError("sigma grid must be nonempty")
    if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
        raise ConfigError("sigma grid must be strictly ascending")
    if kind == "fixed_test":
        scenarios = [Scenario("fixed_test", axes=("x", "y", "z"), angle_deg=s, seed=master_seed) for s in sigmas]
    else:
        scenarios = scenario_catalog(sigmas, [kind], master_seed, period_s)
    result = SweepResult(kind, building or (test_trials[0].building if test_trials else ""), sigmas)
    test_only = kind in TEST_ONLY

    def run_series(mode, variant):
        name = series_name(mode, variant)
        values = [float("nan")] * len(sigmas)
        failed = []
        replicate = replicate_invariant and mode == "inv2d"
        model = None
        for i, (sigma, sc) in enumerate(zip(sigmas, scenarios)):
            if replicate and i > 0:
                values[i] = values[0]
                continue
            try:
                if test_only:
                    if model is None:
                        model = train_fn(mode, variant, train_trials, val_trials)
                    current = model
                else:
                    tr = perturb_trials(train_trials, sc, "train")
                    va = perturb_trials(val_trials, sc, "val")
                    current = train_fn(mode, variant, tr, va)
                values[i] = evaluate(current, test_trials, sc, eval_stride).mae
                log.info("sweep %s %s sigma=%g mae=%.4f", kind, name, sigma, values[i])
            except Exception as exc:  # noqa: BLE001 - a failed point must not abort the sweep
                log.error("sweep point %s sigma=%g failed: %s", name, sigma, exc)
                failed.append({"series": name, "sigma": sigma, "error": f"{type(exc).__name__}: {exc}"})
        return name, values, failed, replicate

    tasks = [(m, v) for m in modes for v in variants]
    if jobs > 1 and len(tasks) > 1:
        # series are independent; BLAS releases the GIL so threads overlap
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(lambda t: run_series(*t), tasks))
    else:
        outcomes = [run_series(*t) for t in tasks]
    for name, values, failed, replicate in outcomes:
        result.series[name] = values
        result.failed.extend(failed)
        if replicate:
            result.flags.setdefault(name, []).append("invariant-replicated")
    return result
