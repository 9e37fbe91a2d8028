from __future__ import annotations

import numpy as np

from magloc.errors import ContractError


def mae(predictions, truths, per_coordinate: bool = False) -> float:
    """Mean absolute position error in meters.

    By default each window contributes the Euclidean distance between
    predicted and true (x, y).  ``per_coordinate=True`` averages the
    absolute coordinate differences instead.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ContractError(f"predictions {p.shape} and truths {t.shape} differ in shape")
    if p.ndim != 2 or p.shape[1] != 2:
        raise ContractError(f"expected (n, 2) position arrays, got {p.shape}")
    if len(p) == 0:
        raise ContractError("mae of an empty set is undefined")
    if per_coordinate:
        return float(np.mean(np.abs(p - t)))
    return float(np.mean(np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1])))


def error_summary(predictions, truths) -> dict:
    d = np.hypot(*(np.asarray(predictions, float) - np.asarray(truths, float)).T)
    return {"median": float(np.median(d)), "p90": float(np.percentile(d, 90))}
