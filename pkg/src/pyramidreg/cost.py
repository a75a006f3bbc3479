"""Registration costs: symmetric chamfer, correspondences, deformability.

The chamfer term is symmetric and uses an unsquared norm per residual:
rho is either the L1 norm (sum of absolute components, the default; more
forgiving of partial overlap) or the Euclidean norm. Nearest-neighbor
indices are looked up from the current point positions and then held
constant through the backward pass of that iteration; both directions
are re-resolved every iteration.

Lookup strategy: brute force below 64 reference points (index build
cost dominates there), a scipy KD-tree at or above. Distance ties break
toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .core import NormKind, PointCloud, PyramidConfig
from .errors import DegenerateCloudError, ShapeError

KDTREE_MIN_POINTS = 64


def _points_of(obj) -> np.ndarray:
    if isinstance(obj, PointCloud):
        return obj.points
    if isinstance(obj, ad.Tensor):
        return obj.data
    return np.asarray(obj, dtype=np.float64)


class NnIndex:
    """Nearest-neighbor index over a fixed (m, 3) reference cloud."""

    def __init__(self, points, method: str = "auto"):
        pts = _points_of(points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"NnIndex expects (m, 3) points, got {pts.shape}")
        if pts.shape[0] == 0:
            raise DegenerateCloudError("cannot index an empty point cloud")
        if method == "auto":
            method = "kdtree" if pts.shape[0] >= KDTREE_MIN_POINTS else "brute"
        if method not in ("brute", "kdtree"):
            raise ValueError(f"unknown NnIndex method '{method}'")
        self.points = pts
        self.method = method
        if method == "kdtree":
            self._tree = cKDTree(pts)
        else:
            self._sq_norms = (pts * pts).sum(axis=1)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Index and distance of the nearest reference point per query row."""
        q = _points_of(queries)
        if q.ndim != 2 or q.shape[1] != 3:
            raise ShapeError(f"query expects (n, 3) points, got {q.shape}")
        if self.method == "kdtree":
            return self._query_kdtree(q)
        return self._query_brute(q)

    def _query_kdtree(self, q):
        if self.points.shape[0] == 1:
            dist, idx = self._tree.query(q, k=1, workers=-1)
            return idx.astype(np.int64), dist
        dist, idx = self._tree.query(q, k=2, workers=-1)
        best = idx[:, 0].copy()
        tie = dist[:, 0] == dist[:, 1]
        best[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
        return best.astype(np.int64), dist[:, 0]

    def _query_brute(self, q, chunk: int = 1024):
        n = q.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            block = q[lo:hi]
            d2 = (block * block).sum(axis=1)[:, None] - 2.0 * (block @ self.points.T)
            d2 += self._sq_norms[None, :]
            best = np.argmin(d2, axis=1)  # ties resolve to the lowest index
            idx[lo:hi] = best
            dist[lo:hi] = np.sqrt(np.maximum(d2[np.arange(hi - lo), best], 0.0))
        return idx, dist


def nearest_neighbors(queries, index: NnIndex) -> tuple[np.ndarray, np.ndarray]:
    return index.query(queries)


def _rho_rows(diff: ad.Tensor, norm_kind: NormKind) -> ad.Tensor:
    """Per-row residual norm, (n, 3) -> (n, 1)."""
    if norm_kind is NormKind.L1:
        return ad.sum_rows(ad.abs_(diff))
    return ad.sqrt(ad.sum_rows(ad.mul(diff, diff)))


def _as_warped_tensor(warped) -> ad.Tensor:
    if isinstance(warped, ad.Tensor):
        t = warped
    else:
        t = ad.Tensor(_points_of(warped))
    if t.data.ndim != 2 or t.data.shape[1] != 3:
        raise ShapeError(f"expected (n, 3) warped points, got {t.data.shape}")
    if t.data.shape[0] == 0:
        raise DegenerateCloudError("chamfer cost over an empty cloud")
    return t


def chamfer_cost(warped, target, norm_kind: NormKind = NormKind.L1,
                 target_index: NnIndex | None = None,
                 frozen_indices: tuple | None = None) -> ad.Tensor:
    """Symmetric chamfer cost between warped source points and the target.

    ``target_index`` can be supplied to reuse the static target-side
    index across iterations. ``frozen_indices`` (forward, reverse) skips
    the lookup entirely; finite-difference probes use this to hold the
    assignment fixed.
    """
    w = _as_warped_tensor(warped)
    tgt = _points_of(target)
    if tgt.shape[0] == 0:
        raise DegenerateCloudError("chamfer cost against an empty target")
    if frozen_indices is not None:
        idx_fwd, idx_rev = frozen_indices
    else:
        if target_index is None:
            target_index = NnIndex(tgt)
        idx_fwd, _ = target_index.query(w.data)
        idx_rev, _ = NnIndex(w.data).query(tgt)
    fwd = ad.sub(w, ad.Tensor(tgt[idx_fwd]))
    rev = ad.sub(ad.Tensor(tgt), ad.gather_rows(w, idx_rev))
    return ad.add(ad.mean(_rho_rows(fwd, norm_kind)), ad.mean(_rho_rows(rev, norm_kind)))


def correspondence_cost(warped, target, matches,
                        norm_kind: NormKind = NormKind.L1) -> ad.Tensor:
    """Mean residual norm over sparse (u, v) matches."""
    w = _as_warped_tensor(warped)
    tgt = _points_of(target)
    matches.validate_against(w.data.shape[0], tgt.shape[0])
    if len(matches) == 0:
        raise ShapeError("correspondence cost over an empty match set")
    picked = ad.gather_rows(w, matches.u)
    diff = ad.sub(picked, ad.Tensor(tgt[matches.v]))
    return ad.mean(_rho_rows(diff, norm_kind))


ALPHA_CLAMP = 1.0 - 1e-6


def deformability_reg(alpha) -> ad.Tensor:
    """Mean of -log(1 - alpha): pushes blend weights toward rigidity.

    Alpha is clamped to [0, 1 - 1e-6] so the cost stays finite even at
    saturated blend weights.
    """
    if not isinstance(alpha, ad.Tensor):
        alpha = ad.Tensor(np.asarray(alpha, dtype=np.float64))
    clamped = ad.clamp(alpha, 0.0, ALPHA_CLAMP)
    one_minus = ad.add_scalar(ad.neg(clamped), 1.0)
    return ad.mean(ad.neg(ad.log(one_minus)))


@dataclass
class CostBreakdown:
    """Cost terms of one iteration, plus the differentiable total.

    ``data_cost`` is the weighted alignment part (chamfer + matches)
    that convergence checks track; ``total_tensor`` is the handle the
    optimizer backpropagates through (None for constant inputs).
    """

    e_cd: float
    e_cor: float
    e_reg: float
    e_total: float
    data_cost: float
    total_tensor: ad.Tensor | None = None


def total_cost(warped, target, alpha, cfg: PyramidConfig, matches=None,
               target_index: NnIndex | None = None,
               frozen_indices: tuple | None = None,
               corr_target=None) -> CostBreakdown:
    """Weighted sum of the cost terms.

    The correspondence weight only participates when matches are
    actually supplied; chamfer-only operation is the default mode.
    ``corr_target`` lets match indices refer to the full target cloud
    while the chamfer term runs against a subsampled one.
    """
    cd = chamfer_cost(warped, target, cfg.norm_kind, target_index, frozen_indices)
    total = ad.mul_scalar(cd, cfg.lambda_cd)
    e_cor = 0.0
    if matches is not None and len(matches) > 0:
        cor = correspondence_cost(warped, target if corr_target is None else corr_target,
                                  matches, cfg.norm_kind)
        e_cor = float(cor.data)
        total = ad.add(total, ad.mul_scalar(cor, cfg.lambda_cor))
    data_cost = float(total.data)
    reg = deformability_reg(alpha)
    total = ad.add(total, ad.mul_scalar(reg, cfg.lambda_reg))
    return CostBreakdown(
        e_cd=float(cd.data),
        e_cor=e_cor,
        e_reg=float(reg.data),
        e_total=float(total.data),
        data_cost=data_cost,
        total_tensor=total if total.node is not None else None,
    )
