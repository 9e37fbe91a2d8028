"""Gravity estimation, rotation-invariant features and sliding windows.

Two input modes exist:

``raw3d``
    the magnetometer components ``(M_x, M_y, M_z)`` in the sensor frame;
``inv2d``
    the field norm ``M_n = |M|`` and its projection on the gravity axis
    ``M_g = M . g``, both unchanged when the device rotates.

``M_g`` stays invariant under a time-varying device rotation only if the
gravity direction at sample *n* is computed from data in the same sensor
frame as the magnetometer sample *n*.  The window builders therefore
default to per-sample gravity (``alpha=1``); smoothing with ``alpha < 1``
is exactly equivariant only for rotations that are constant in time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from magloc.data.trial import Trial
from magloc.errors import ContractError, DataError

log = logging.getLogger(__name__)

MODES = ("raw3d", "inv2d")
CHANNELS = {"raw3d": ("M_x", "M_y", "M_z"), "inv2d": ("M_n", "M_g")}
WINDOW = 200
FREE_FALL = 0.5  # m/s^2
DEFAULT_GRAVITY_ALPHA = 1.0


@dataclass(frozen=True)
class GravityEstimate:
    g: np.ndarray  # (N, 3) unit vectors, sensor frame, pointing "up"
    alpha: float
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def estimate_gravity(acc, alpha: float = 0.02) -> GravityEstimate:
    """Low-pass the accelerometer and normalize to a unit up-vector.

    ``v_n = alpha * acc_n + (1 - alpha) * v_{n-1}`` with ``v_0 = acc_0`` and
    ``g_n = -v_n / |v_n|``, so a static device reading ``(0, 0, -9.81)``
    yields ``g = (0, 0, 1)``.  Samples where ``|v_n|`` drops below
    0.5 m/s^2 are flagged and hold the previous direction.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3 or len(acc) == 0:
        raise ContractError(f"acc stream must be a nonempty (N, 3) array, got {acc.shape}")
    if not 0 < alpha <= 1:
        raise ContractError(f"alpha must be in (0, 1], got {alpha}")
    if not np.any(acc[0]):
        raise ContractError("first accelerometer sample must be nonzero")
    if alpha == 1:
        v = acc.copy()
    else:
        zi = (1 - alpha) * acc[0]
        v = lfilter([alpha], [1.0, alpha - 1.0], acc, axis=0, zi=zi[None, :])[0]
    norm = np.linalg.norm(v, axis=1)
    flagged = np.flatnonzero(norm < FREE_FALL)
    g = -v / np.where(norm > 0, norm, 1.0)[:, None]
    for i in flagged:
        if i > 0:
            g[i] = g[i - 1]
    return GravityEstimate(g, alpha, flagged)


def invariant_features(mag, g) -> tuple[np.ndarray, np.ndarray]:
    """``(M_n, M_g)`` for one sample or a stream of samples."""
    mag = np.asarray(mag, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return np.linalg.norm(mag, axis=-1), np.sum(mag * g, axis=-1)


def feature_stream(trial: Trial, mode: str, gravity_alpha: float = DEFAULT_GRAVITY_ALPHA) -> np.ndarray:
    """Per-sample features of a whole trial, shape (channels, N), float64."""
    if mode == "raw3d":
        return trial.mag.T.copy()
    if mode == "inv2d":
        g = estimate_gravity(trial.acc, gravity_alpha).g
        mn, mg = invariant_features(trial.mag, g)
        return np.vstack([mn, mg])
    raise ContractError(f"unknown mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class FeatureWindow:
    matrix: np.ndarray  # (channels, W)
    target: tuple[float, float]
    building: str
    trial_id: str
    end_index: int

    @property
    def channels(self) -> int:
        return self.matrix.shape[0]


@dataclass
class WindowSet:
    """A batch of windows: ``x`` is (N, C, W) float32, ``y`` is (N, 2) meters."""

    mode: str
    x: np.ndarray
    y: np.ndarray
    trial_ids: np.ndarray  # (N,) object
    end_index: np.ndarray  # (N,) int
    building: str = ""
    window: int = WINDOW

    def __len__(self) -> int:
        return len(self.x)

    @property
    def channels(self) -> int:
        return self.x.shape[1] if self.x.ndim == 3 else len(CHANNELS[self.mode])

    def __getitem__(self, i: int) -> FeatureWindow:
        return FeatureWindow(self.x[i], tuple(self.y[i]), self.building, str(self.trial_ids[i]), int(self.end_index[i]))

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.mode, self.x[idx], self.y[idx], self.trial_ids[idx], self.end_index[idx], self.building, self.window)

    @staticmethod
    def empty(mode: str, window: int = WINDOW, building: str = "") -> "WindowSet":
        c = len(CHANNELS[mode])
        return WindowSet(
            mode,
            np.zeros((0, c, window), np.float32),
            np.zeros((0, 2)),
            np.zeros(0, dtype=object),
            np.zeros(0, dtype=np.int64),
            building,
            window,
        )

    @staticmethod
    def concat(sets: list["WindowSet"]) -> "WindowSet":
        sets = list(sets)
        if not sets:
            raise DataError("cannot concatenate zero window sets")
        first = sets[0]
        if any(s.mode != first.mode or s.window != first.window for s in sets):
            raise DataError("window sets disagree on mode or window length")
        return WindowSet(
            first.mode,
            np.concatenate([s.x for s in sets]),
            np.concatenate([s.y for s in sets]),
            np.concatenate([s.trial_ids for s in sets]),
            np.concatenate([s.end_index for s in sets]),
            first.building,
            first.window,
        )

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.mode}/{self.window}".encode())
        h.update(np.ascontiguousarray(self.x).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()


def window_count(n: int, window: int, stride: int) -> int:
    return 0 if n < window else (n - window) // stride + 1


def make_windows(
    trial: Trial,
    mode: str,
    window: int = WINDOW,
    stride: int = 1,
    gravity_alpha: float = DEFAULT_GRAVITY_ALPHA,
) -> WindowSet:
    """Overlapping windows whose target is the position of the last sample."""
    if stride < 1:
        raise ContractError("stride must be >= 1")
    n = len(trial)
    if n < window:
        log.warning("trial %s has %d samples, shorter than window %d", trial.trial_id, n, window)
        return WindowSet.empty(mode, window, trial.building)
    feats = feature_stream(trial, mode, gravity_alpha)
    views = sliding_window_view(feats, window, axis=1)[:, ::stride]  # (C, count, W)
    x = np.ascontiguousarray(views.transpose(1, 0, 2), dtype=np.float32)
    end = np.arange(window - 1, n, stride)[: len(x)]
    y = trial.pos[end, :2].copy()
    ids = np.full(len(x), trial.trial_id, dtype=object)
    return WindowSet(mode, x, y, ids, end.astype(np.int64), trial.building, window)


def windows_for(trials, mode: str, window: int = WINDOW, stride: int = 1, gravity_alpha: float = DEFAULT_GRAVITY_ALPHA) -> WindowSet:
    sets = [make_windows(tr, mode, window, stride, gravity_alpha) for tr in trials]
    if not sets:
        return WindowSet.empty(mode, window)
    return WindowSet.concat(sets)


@dataclass(frozen=True)
class ChannelStats:
    mean: tuple[float, ...]
    std: tuple[float, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        for i, s in enumerate(self.std):
            name = self.names[i] if i < len(self.names) else f"channel {i}"
            if not (math.isfinite(s) and math.isfinite(self.mean[i])):
                raise DataError(f"non-finite values in channel {name}; cannot standardize")
            if not s > 0:
                raise DataError(f"zero variance in channel {name}; cannot standardize")

    @classmethod
    def fit(cls, windows: WindowSet) -> "ChannelStats":
        if len(windows) == 0:
            raise DataError("cannot fit channel statistics on an empty window set")
        x = windows.x.astype(np.float64)
        c = x.shape[1]
        flat = x.transpose(1, 0, 2).reshape(c, -1)
        mean = flat.mean(axis=1)
        std = flat.std(axis=1)
        return cls(tuple(mean), tuple(std), CHANNELS.get(windows.mode, ()))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(tuple(d["mean"]), tuple(d["std"]), tuple(d.get("names", ())))

    def apply(self, x: np.ndarray) -> np.ndarray:
        mean = np.asarray(self.mean)[None, :, None]
        std = np.asarray(self.std)[None, :, None]
        if x.shape[-2] != len(self.mean):
            raise DataError(f"windows have {x.shape[-2]} channels, stats have {len(self.mean)}")
        return ((x.astype(np.float64) - mean) / std).astype(np.float32)


def standardize(windows: WindowSet, stats: ChannelStats | None = None) -> tuple[WindowSet, ChannelStats]:
    """Standardize each channel; fits ``stats`` on ``windows`` when not given."""
    stats = stats or ChannelStats.fit(windows)
    out = WindowSet(windows.mode, stats.apply(windows.x), windows.y, windows.trial_ids, windows.end_index, windows.building, windows.window)
    return out, stats


_MODE_CODES = {"raw3d": 0, "inv2d": 1}
_WIN_MAGIC = b"MWIN"


def save_windows(windows: WindowSet, path, stats: ChannelStats | None = None) -> None:
    """Binary blob (header + f32 windows + f64 targets) with a JSON sidecar."""
    path = Path(path)
    n, c = len(windows), len(CHANNELS[windows.mode])
    header = _WIN_MAGIC + struct.pack("<IIII", _MODE_CODES[windows.mode], windows.window, c, n)
    body = np.ascontiguousarray(windows.x, dtype="<f4").tobytes() + np.ascontiguousarray(windows.y, dtype="<f8").tobytes()
    path.write_bytes(header + body)
    sidecar = {
        "building": windows.building,
        "trial_ids": [str(t) for t in windows.trial_ids],
        "end_index": [int(i) for i in windows.end_index],
        "stats": stats.to_dict() if stats else None,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_windows(path) -> tuple[WindowSet, ChannelStats | None]:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != _WIN_MAGIC:
        raise DataError(f"{path}: not a window blob")
    code, window, c, n = struct.unpack_from("<IIII", buf, 4)
    mode = {v: k for k, v in _MODE_CODES.items()}[code]
    off = 20
    x = np.frombuffer(buf, "<f4", n * c * window, off).reshape(n, c, window).astype(np.float32)
    off += 4 * n * c * window
    y = np.frombuffer(buf, "<f8", n * 2, off).reshape(n, 2).astype(np.float64)
    side = json.loads(path.with_suffix(".json").read_text())
    stats = ChannelStats.from_dict(side["stats"]) if side.get("stats") else None
    ws = WindowSet(mode, x, y, np.array(side["trial_ids"], dtype=object), np.array(side["end_index"], dtype=np.int64), side["building"], window)
    return ws, stats
