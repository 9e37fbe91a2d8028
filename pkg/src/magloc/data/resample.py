from __future__ import annotations

import numpy as np

from magloc.data.trial import TARGET_RATE, Trial
from magloc.errors import DataError


def uniform_grid(t_first: float, t_last: float, rate: float) -> np.ndarray:
    """Grid ``t_first + n / rate`` covering [t_first, t_last] (last point may need clamping)."""
    count = int(np.floor((t_last - t_first) * rate + 1e-6)) + 1
    return t_first + np.arange(count) / rate


def resample_align(trial: Trial, rate: float = TARGET_RATE) -> Trial:
    """Linearly interpolate every channel (position included) onto a uniform grid.

    The grid never extends past the first and last timestamps, so nothing
    is extrapolated.
    """
    if len(trial) < 2:
        raise DataError(f"trial {trial.trial_id}: need at least 2 records to resample, got {len(trial)}")
    grid = uniform_grid(float(trial.t[0]), float(trial.t[-1]), rate)
    grid = np.minimum(grid, trial.t[-1])

    def interp(a):
        return np.column_stack([np.interp(grid, trial.t, a[:, j]) for j in range(a.shape[1])])

    return trial.replace(t=grid, mag=interp(trial.mag), acc=interp(trial.acc), pos=interp(trial.pos), rate=rate)


def median_rate(t: np.ndarray) -> float:
    dt = np.diff(np.asarray(t, dtype=np.float64))
    return float(1.0 / np.median(dt)) if len(dt) else float("nan")
