"""Coarse-to-fine registration: one small MLP per frequency level.

Levels are optimized strictly top-down. While level k trains, levels
1..k-1 are frozen and represented only by their cached output cloud, so
each iteration runs exactly one small network forward/backward pass no
matter how deep the pyramid is. A converged level contributes its warp
through that cache; the full stack of frozen networks is kept so new
points can be warped continuously after the fact.

Convergence bookkeeping tracks the weighted data-fit cost (chamfer plus
correspondence terms). The deformability regularizer keeps the total
objective away from zero even at perfect alignment, so thresholding the
total would never fire; gradients still descend the full objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import mlp as mlp_mod
from . import warpfield as wf
from .core import (NormalizationRecord, PointCloud, PyramidConfig,
                   normalize_clouds, validate_config)
from .cost import NnIndex, total_cost
from .encoding import positional_encode
from .errors import DegenerateCloudError, NonFiniteError, NumericalError

STALL_REL_IMPROVEMENT = 1e-4

STOP_MAX_ITER = "max_iter"
STOP_COST = "cost_threshold"
STOP_STALLED = "stalled"


# ---------------------------------------------------------------------------
# optimizer


class OptimizerState:
    """Per-parameter state for plain or adaptive-moment gradient descent."""

    def __init__(self, kind: str, params: list[np.ndarray], learning_rate: float):
        self.kind = kind
        self.params = params
        self.learning_rate = learning_rate
        self.t = 0
        if kind == "adam":
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def step_optimizer(state: OptimizerState, gradients: list[np.ndarray],
                   learning_rate: float | None = None) -> list[np.ndarray]:
    """Apply one update in place; returns the parameter arrays.

    'adam' keeps exponential first/second moment estimates (decay 0.9 /
    0.999, eps 1e-8) with bias correction; 'sgd' is a plain step.
    """
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.t += 1
    if state.kind == "sgd":
        for p, g in zip(state.params, gradients):
            p -= lr * g
        return state.params
    b1, b2, eps = 0.9, 0.999, 1e-8
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(state.params, gradients)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        p -= lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + eps)
    return state.params


def check_convergence(history: list[float], cfg: PyramidConfig) -> str | None:
    """Stop decision for one level given its cost history so far.

    Reasons, in priority order: the cost fell to ``cost_threshold``; the
    iteration cap was reached; or every one of the trailing
    ``stall_window`` iterations improved on its predecessor by less
    than a relative 1e-4. A single sufficiently large improvement
    anywhere in the window keeps the level running.
    """
    if history[-1] <= cfg.cost_threshold:
        return STOP_COST
    if len(history) >= cfg.max_iter:
        return STOP_MAX_ITER
    if len(history) > cfg.stall_window:
        for j in range(len(history) - cfg.stall_window, len(history)):
            prev = history[j - 1]
            if prev - history[j] >= STALL_REL_IMPROVEMENT * abs(prev):
                return None
        return STOP_STALLED
    return None


# ---------------------------------------------------------------------------
# results


@dataclass
class LevelTrace:
    """Optimization record of a single level.

    ``warped`` snapshots the optimization points after this level, in
    input units (the subsampled set when subsampling is active).
    """

    level: int
    iterations: int
    stop_reason: str
    cost_history: np.ndarray
    final_cost: float          # data-fit cost of the restored best state
    final_total_cost: float
    mean_alpha: float
    min_alpha: float
    max_alpha: float
    warped: np.ndarray


class FrozenPyramid:
    """The converged level networks; warps arbitrary points continuously."""

    def __init__(self, levels: list, cfg: PyramidConfig, record: NormalizationRecord):
        self.levels = levels
        self.cfg = cfg
        self.record = record

    def apply(self, points, upto: int | None = None) -> np.ndarray:
        """Warp (n, 3) input-unit points through the first ``upto`` levels."""
        return self.apply_per_level(points, upto)[-1]

    def apply_per_level(self, points, upto: int | None = None) -> list[np.ndarray]:
        """Input-unit snapshots after each applied level (level 1 first)."""
        pts = np.asarray(points, dtype=np.float64)
        x = self.record.apply_points(pts)
        out = []
        for i, net in enumerate(self.levels[:upto]):
            enc = positional_encode(x, i + 1, self.cfg.k0)
            x_k, _, _ = _level_outputs(net, enc, ad.Tensor(x), self.cfg)
            x = x_k.data
            out.append(self.record.invert_points(x))
        if not out:
            out.append(self.record.invert_points(x))
        return out


@dataclass
class RegistrationResult:
    warped: PointCloud
    traces: list
    total_iterations: int
    wall_seconds: float
    pyramid: FrozenPyramid
    subsample_indices: np.ndarray | None = None


# ---------------------------------------------------------------------------
# registration


def _level_outputs(net, encoded, x_t, cfg: PyramidConfig, tape=None):
    """One level pass: encoded coords -> blended output points."""
    xi_raw, alpha, leaves = mlp_mod.forward(net, encoded, tape)
    offset = wf.identity_params(cfg.warp_type, cfg.rot_repr)
    xi = ad.add_bias(xi_raw, ad.Tensor(offset))
    x_k = wf.compose_level(x_t, xi, alpha, cfg.warp_type, cfg.rot_repr)
    return x_k, alpha, leaves


def _pick_subsample(count: int, cap: int, seed_tag: list) -> np.ndarray | None:
    if cap <= 0 or count <= cap:
        return None
    rng = np.random.default_rng(seed_tag)
    return np.sort(rng.choice(count, size=cap, replace=False))


def register(source: PointCloud, target: PointCloud, cfg: PyramidConfig,
             matches=None) -> RegistrationResult:
    """Register ``source`` onto ``target``; returns the warped source.

    Levels run in order; each one stops on its own convergence check.
    When a level's data cost reaches ``cost_threshold`` the clouds are
    registered and the remaining levels are skipped entirely. Each level
    keeps the weights of its best-cost iteration, not the last one.
    """
    validate_config(cfg)
    if source.count == 0 or target.count == 0:
        raise DegenerateCloudError("cannot register an empty point cloud")
    if matches is not None:
        matches.validate_against(source.count, target.count)

    started = time.perf_counter()
    if cfg.normalize:
        src_n, tgt_n, record = normalize_clouds(source, target)
    else:
        src_n, tgt_n, record = source, target, NormalizationRecord.identity()

    src_idx = _pick_subsample(src_n.count, cfg.subsample, [cfg.rng_seed, 7919])
    local_matches = matches if (matches is not None and len(matches) > 0) else None
    if src_idx is not None and local_matches is not None:
        # keep matched source points in the optimization set
        src_idx = np.union1d(src_idx, local_matches.u)
    if src_idx is not None and local_matches is not None:
        local_matches = type(local_matches)(
            u=np.searchsorted(src_idx, local_matches.u),
            v=local_matches.v, confidence=local_matches.confidence)

    tgt_idx = _pick_subsample(tgt_n.count, cfg.subsample, [cfg.rng_seed, 104729])
    x = src_n.points if src_idx is None else src_n.points[src_idx]
    tgt_opt = tgt_n.points if tgt_idx is None else tgt_n.points[tgt_idx]
    target_index = NnIndex(tgt_opt)

    levels, traces = [], []
    total_iterations = 0
    for k in range(1, cfg.m + 1):
        net = mlp_mod.init_mlp(6, cfg.mlp_width, cfg.mlp_depth,
                               wf.xi_dim(cfg.warp_type, cfg.rot_repr),
                               rng_seed=[cfg.rng_seed, k], scheme=cfg.init_scheme,
                               output_scale=cfg.output_scale, activation=cfg.activation)
        enc = positional_encode(x, k, cfg.k0).data
        opt = OptimizerState(cfg.optimizer, net.param_arrays(), cfg.learning_rate)
        history: list[float] = []
        best_cost = np.inf
        best_weights = None
        reason = None
        for it in range(1, cfg.max_iter + 1):
            try:
                with ad.Tape() as tape:
                    x_k, alpha, leaves = _level_outputs(net, ad.Tensor(enc), ad.Tensor(x),
                                                        cfg, tape)
                    bd = total_cost(x_k, tgt_opt, alpha, cfg, local_matches,
                                    target_index, corr_target=tgt_n.points)
                history.append(bd.data_cost)
                if bd.data_cost < best_cost:
                    best_cost = bd.data_cost
                    best_weights = net.copy_weights()
                reason = check_convergence(history, cfg)
                if reason is not None:
                    break
                grads = tape.gradient(bd.total_tensor, leaves)
            except NonFiniteError as exc:
                raise NumericalError(f"level {k} iteration {it}: {exc}") from exc
            for g in grads:
                if not np.isfinite(g).all():
                    raise NumericalError(f"level {k} iteration {it}: non-finite gradient")
            step_optimizer(opt, grads)

        net.set_weights(best_weights)
        x_best, alpha_best, _ = _level_outputs(net, ad.Tensor(enc), ad.Tensor(x), cfg)
        bd_best = total_cost(x_best, tgt_opt, alpha_best, cfg, local_matches,
                             target_index, corr_target=tgt_n.points)
        x = x_best.data
        a = alpha_best.data
        traces.append(LevelTrace(
            level=k, iterations=len(history), stop_reason=reason,
            cost_history=np.asarray(history), final_cost=bd_best.data_cost,
            final_total_cost=bd_best.e_total, mean_alpha=float(a.mean()),
            min_alpha=float(a.min()), max_alpha=float(a.max()),
            warped=record.invert_points(x)))
        levels.append(net)
        total_iterations += len(history)
        if reason == STOP_COST:
            break

    pyramid = FrozenPyramid(levels, cfg, record)
    if src_idx is None:
        warped_points = record.invert_points(x)
    else:
        warped_points = pyramid.apply(source.points)
    return RegistrationResult(
        warped=PointCloud(warped_points, source.attrs),
        traces=traces,
        total_iterations=total_iterations,
        wall_seconds=time.perf_counter() - started,
        pyramid=pyramid,
        subsample_indices=src_idx,
    )
