from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from magloc.errors import ContractError


@dataclass(frozen=True)
class ThresholdResult:
    building: str
    threshold_deg: float | None  # None: 3D beats 2D everywhere on the grid
    mae3d: float | None
    mae2d: float | None

    @property
    def found(self) -> bool:
        return self.threshold_deg is not None

    def to_dict(self) -> dict:
        return {"building": self.building, "threshold_deg": self.threshold_deg, "mae3d_m": self.mae3d, "mae2d_m": self.mae2d}


def find_threshold(sigmas: Sequence[float], mae3d: Sequence[float], mae2d: Sequence[float], building: str = "") -> ThresholdResult:
    """Smallest sigma at which the invariant 2D input is at least as accurate as 3D.

    Interpolates linearly between the grid points that bracket the first
    sign change of ``mae3d - mae2d``.  Returns sigma[0] when 2D already wins
    at the start of the grid and ``threshold_deg=None`` when it never does.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    a = np.asarray(mae3d, dtype=np.float64)
    b = np.asarray(mae2d, dtype=np.float64)
    if not (len(s) == len(a) == len(b)) or len(s) == 0:
        raise ContractError("sigma grid and both MAE series must be nonempty and aligned")
    if np.any(np.diff(s) <= 0):
        raise ContractError("sigma grid must be strictly ascending")
    diff = a - b
    ok = np.isfinite(diff)
    hits = np.flatnonzero(ok & (diff >= 0))
    if len(hits) == 0:
        return ThresholdResult(building, None, None, None)
    i = int(hits[0])
    if i == 0 or not ok[i - 1]:
        return ThresholdResult(building, float(s[i]), float(a[i]), float(b[i]))
    f = -diff[i - 1] / (diff[i] - diff[i - 1])
    sigma = s[i - 1] + f * (s[i] - s[i - 1])
    return ThresholdResult(
        building,
        float(sigma),
        float(a[i - 1] + f * (a[i] - a[i - 1])),
        float(b[i - 1] + f * (b[i] - b[i - 1])),
    )
