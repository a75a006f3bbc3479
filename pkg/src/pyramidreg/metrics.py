"""Scene-flow style accuracy metrics for dense warp fields.

All inputs are per-point 3-D displacement vectors in input (scene meter)
units. With e_i = pred_i - gt_i and the relative error
rel_i = |e_i| / max(|gt_i|, 1e-12):

* EPE: mean |e_i|
* AccS: percent of points with rel < 0.025 or |e_i| < 0.025 m
* AccR: percent of points with rel < 0.05 or |e_i| < 0.05 m
* Outlier: percent of points with rel > 0.30 (relative only)

The absolute branches are what keep the strict metrics meaningful for
points whose true motion is tiny.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError

REL_FLOOR = 1e-12
ACC_STRICT = 0.025
ACC_RELAXED = 0.05
OUTLIER_REL = 0.30


@dataclass(frozen=True)
class FlowMetrics:
    epe: float
    acc_strict: float     # percent
    acc_relaxed: float    # percent
    outlier: float        # percent

    def as_dict(self) -> dict:
        return {"epe": self.epe, "acc_strict": self.acc_strict,
                "acc_relaxed": self.acc_relaxed, "outlier": self.outlier}


def compute_metrics(pred: np.ndarray, gt: np.ndarray) -> FlowMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ShapeError(f"metrics expect matching (n, 3) warps, got {pred.shape} vs {gt.shape}")
    if pred.shape[0] == 0:
        raise ShapeError("metrics over zero points are undefined")
    if not (np.isfinite(pred).all() and np.isfinite(gt).all()):
        raise NonFiniteError("metrics input contains non-finite values")
    err = np.linalg.norm(pred - gt, axis=1)
    gt_mag = np.linalg.norm(gt, axis=1)
    rel = err / np.maximum(gt_mag, REL_FLOOR)
    return FlowMetrics(
        epe=float(err.mean()),
        acc_strict=float(100.0 * np.mean((rel < ACC_STRICT) | (err < ACC_STRICT))),
        acc_relaxed=float(100.0 * np.mean((rel < ACC_RELAXED) | (err < ACC_RELAXED))),
        outlier=float(100.0 * np.mean(rel > OUTLIER_REL)),
    )
