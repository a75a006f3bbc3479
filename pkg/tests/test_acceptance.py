"""End-to-end acceptance gate.

Every test here checks one released guarantee of the package, at full
default configuration, and appends one PASS/FAIL line with its measured
numbers to the scorecard that conftest prints after the run. The twenty
standard suite registrations are expensive, so they run once per config
inside module fixtures and the criteria that read them share the result.
"""

import dataclasses
import time

import numpy as np
import pytest

from pyramidreg import (
    NnIndex,
    NormKind,
    PointCloud,
    PyramidConfig,
    RotationRepr,
    WarpFieldType,
    add_noise,
    apply_deformation,
    chamfer_cost,
    compute_metrics,
    deformability_reg,
    make_partial,
    make_suite,
    positional_encode,
    register,
    rotation_from_repr,
    sample_surface,
)
from pyramidreg import autodiff as ad
from pyramidreg import mlp as mlp_mod
from pyramidreg import warpfield as wf
from pyramidreg.metrics import FlowMetrics
from pyramidreg.pyramid import STOP_COST
from pyramidreg.synth import DeformationSpec

_CFG = PyramidConfig()  # library defaults drive every registration below


def _report(request, ok: bool, label: str, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
    print(line)
    request.config._scorecard.append(line)
    return ok


# ---------------------------------------------------------------------------
# shared suite runs


@dataclasses.dataclass
class SuiteRun:
    first_accr: np.ndarray   # AccR after level 1, per instance
    final_accr: np.ndarray   # AccR after the last executed level
    final_epe: np.ndarray
    iterations: np.ndarray
    wall_seconds: float


def _run_suite(instances, cfg) -> SuiteRun:
    started = time.perf_counter()
    first, final, epes, iters = [], [], [], []
    for inst in instances:
        res = register(inst.source, inst.target, cfg)
        staged = res.pyramid.apply_per_level(inst.source.points)
        accr = [compute_metrics(w - inst.source.points, inst.gt).acc_relaxed
                for w in staged]
        first.append(accr[0])
        final.append(accr[-1])
        epes.append(compute_metrics(res.warped.points - inst.source.points,
                                     inst.gt).epe)
        iters.append(res.total_iterations)
    return SuiteRun(np.array(first), np.array(final), np.array(epes),
                    np.array(iters), time.perf_counter() - started)


@pytest.fixture(scope="module")
def suite():
    return make_suite()


@pytest.fixture(scope="module")
def clean_run(suite):
    return _run_suite(suite, _CFG)


@pytest.fixture(scope="module")
def euler_run(suite):
    return _run_suite(suite, _CFG.replace(rot_repr=RotationRepr.EULER_XYZ))


@pytest.fixture(scope="module")
def noisy_run(suite):
    noisy = [dataclasses.replace(
        inst,
        target=add_noise(inst.target, ratio=0.10,
                         radius=0.25 * inst.object_scale, seed=300 + i))
        for i, inst in enumerate(suite)]
    return _run_suite(noisy, _CFG)


# ---------------------------------------------------------------------------
# 01: the optimized level cost is exactly differentiated


def test_level_cost_gradient_matches_finite_differences(request):
    started = time.perf_counter()
    # the sigmoid trunk keeps every +-1e-5 probe on one side of each
    # piecewise region; a relu trunk routinely has some pre-activation
    # within the step of its kink, where central differences measure a
    # chord instead of a derivative
    cfg = PyramidConfig(mlp_width=16, mlp_depth=2, lambda_reg=0.1,
                        activation="sigmoid")
    offset = wf.identity_params(cfg.warp_type, cfg.rot_repr)
    worst = 0.0
    all_passed = True
    for seed in range(5):
        rng = np.random.default_rng(seed)
        src = rng.normal(scale=0.5, size=(64, 3))
        tgt = rng.normal(scale=0.5, size=(64, 3))
        net = mlp_mod.init_mlp(6, cfg.mlp_width, cfg.mlp_depth,
                               wf.xi_dim(cfg.warp_type, cfg.rot_repr),
                               rng_seed=[seed, 1], output_scale=cfg.output_scale)
        enc = positional_encode(src, 1, cfg.k0).data

        def level_cost(leaves, frozen=None):
            act = ad.relu if cfg.activation == "relu" else ad.sigmoid
            h = ad.Tensor(enc)
            for i in range(cfg.mlp_depth):
                h = act(ad.add_bias(ad.matmul(h, leaves[2 * i]),
                                    leaves[2 * i + 1]))
            k = 2 * cfg.mlp_depth
            xi_raw = ad.mul_scalar(ad.add_bias(ad.matmul(h, leaves[k]),
                                               leaves[k + 1]), cfg.output_scale)
            xi = ad.add_bias(xi_raw, ad.Tensor(offset))
            alpha = ad.sigmoid(ad.add_bias(ad.matmul(h, leaves[k + 2]),
                                           leaves[k + 3]))
            x_k = wf.compose_level(ad.Tensor(src), xi, alpha,
                                   cfg.warp_type, cfg.rot_repr)
            if frozen is None:
                frozen = (NnIndex(tgt).query(x_k.data)[0],
                          NnIndex(x_k.data).query(tgt)[0])
            cd = chamfer_cost(x_k, tgt, cfg.norm_kind, frozen_indices=frozen)
            return ad.add(ad.mul_scalar(cd, cfg.lambda_cd),
                          ad.mul_scalar(deformability_reg(alpha), cfg.lambda_reg)), frozen

        params = net.param_arrays()
        _, frozen = level_cost([ad.Tensor(a) for a in params])
        # central differences of an O(1) cost at step 1e-5 carry about
        # 1e-11 of cancellation noise, so gradients under 1e-6 have no
        # trustworthy finite-difference reference to compare against
        check = ad.gradient_check(lambda ls: level_cost(ls, frozen)[0],
                                  params, step=1e-5, tol=1e-4, atol=1e-6)
        worst = max(worst, check.max_rel_err)
        all_passed = all_passed and check.passed
    elapsed = time.perf_counter() - started
    ok = all_passed and worst < 1e-4 and elapsed < 30.0
    assert _report(request, ok, "01 level-cost gradients",
                   f"max rel err {worst:.2e} over 5 seeds, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 02: registering a cloud onto itself stops at the cost threshold


def test_identity_registration_hits_cost_threshold(request):
    worst_epe = 0.0
    worst_iters = 0
    cost_stops = 0
    for seed in range(10):
        pts = np.random.default_rng(seed).normal(size=(1000, 3))
        cloud = PointCloud(pts)
        res = register(cloud, cloud, _CFG)
        cost_stops += res.traces[-1].stop_reason == STOP_COST
        epe = compute_metrics(res.warped.points - pts, np.zeros_like(pts)).epe
        worst_epe = max(worst_epe, epe)
        worst_iters = max(worst_iters, res.total_iterations)
    ok = cost_stops == 10 and worst_epe < 1e-3 and worst_iters < 100
    assert _report(request, ok, "02 identity fixed point",
                   f"cost-threshold stop on {cost_stops}/10, worst EPE "
                   f"{worst_epe:.2e}, worst iterations {worst_iters}")


# ---------------------------------------------------------------------------
# 03: accuracy climbs from the coarsest level to the finest


def test_accuracy_rises_with_pyramid_level(request, clean_run):
    gains = clean_run.final_accr - clean_run.first_accr
    n_up = int((gains >= 0.0).sum())
    mean_gain = float(gains.mean())
    ok = n_up >= 18 and mean_gain >= 20.0 and clean_run.wall_seconds < 600.0
    assert _report(request, ok, "03 level-wise accuracy gain",
                   f"non-decreasing on {n_up}/20, mean gain "
                   f"{mean_gain:.1f}pp, suite wall {clean_run.wall_seconds:.0f}s")


# ---------------------------------------------------------------------------
# 04: iteration counts stay inside the per-registration budget


def test_iteration_budget(request, clean_run, euler_run, noisy_run):
    cap = _CFG.m * _CFG.max_iter
    every = np.concatenate([clean_run.iterations, euler_run.iterations,
                            noisy_run.iterations])
    median = float(np.median(clean_run.iterations))
    ok = bool((every <= cap).all()) and median < 2000.0
    assert _report(request, ok, "04 iteration budget",
                   f"max {int(every.max())} of cap {cap} over "
                   f"{every.size} runs, suite median {median:.0f}")


# ---------------------------------------------------------------------------
# 05: the L1 cost degrades less under partial overlap


def test_l1_cost_tolerates_partial_overlap(request):
    instances = make_suite(count=10, n_points=1024, base_seed=500)
    cfg_l2 = _CFG.replace(norm_kind=NormKind.L2)
    wins = 0
    for i, inst in enumerate(instances):
        seen = make_partial(inst.target, overlap_fraction=0.5, seed=900 + i)
        epes = []
        for cfg in (_CFG, cfg_l2):
            res = register(inst.source, seen, cfg)
            epes.append(compute_metrics(res.warped.points - inst.source.points,
                                        inst.gt).epe)
        wins += epes[0] <= epes[1]
    ok = wins >= 7
    assert _report(request, ok, "05 L1 overlap robustness",
                   f"L1 EPE <= L2 EPE on {wins}/10 half-overlap instances")


# ---------------------------------------------------------------------------
# 06: accuracy survives perturbing a tenth of the target points


def test_noise_robustness(request, clean_run, noisy_run):
    clean = float(clean_run.final_accr.mean())
    noisy = float(noisy_run.final_accr.mean())
    drop = clean - noisy
    ok = drop <= 15.0
    assert _report(request, ok, "06 noise robustness",
                   f"mean AccR {clean:.1f} clean vs {noisy:.1f} noisy, "
                   f"drop {drop:.1f}pp")


# ---------------------------------------------------------------------------
# 07: optimization-time subsampling keeps big inputs near-constant cost


def test_subsampling_keeps_large_inputs_cheap(request):
    def pair(n):
        src = sample_surface("cylinder", n, seed=0, scale=1.2)
        tgt, _ = apply_deformation(src, DeformationSpec("twist",
                                                        {"axis": "x", "rate": 1.1}))
        return src, tgt

    def wall(n, subsample):
        src, tgt = pair(n)
        started = time.perf_counter()
        register(src, tgt, _CFG.replace(subsample=subsample))
        return time.perf_counter() - started

    ratio_sub = wall(20480, 2048) / wall(2048, 2048)
    ratio_full = wall(20480, 0) / wall(2048, 0)
    ok = ratio_sub <= 1.5 and ratio_full < 10.0
    assert _report(request, ok, "07 subsampling time",
                   f"20k/2k wall ratio {ratio_sub:.2f} subsampled "
                   f"(cap 1.5), {ratio_full:.2f} full (cap 10)")


# ---------------------------------------------------------------------------
# 08: a global 1.5x similarity is recovered through shape transfer


def test_similarity_scale_recovery(request):
    def diag(pts):
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    worst = 0.0
    for seed in range(5):
        src = sample_surface("torus", 512, seed=seed, scale=1.0)
        tgt = src.with_points(src.points * 1.5)
        query = sample_surface("torus", 256, seed=seed + 1000, scale=1.0)
        cfg = _CFG.replace(warp_type=WarpFieldType.SIM3, rng_seed=seed)
        res = register(src, tgt, cfg)
        moved = res.pyramid.apply(query.points)
        ratio = diag(moved) / diag(query.points)
        worst = max(worst, abs(ratio - 1.5))
    ok = worst <= 0.03
    assert _report(request, ok, "08 similarity scale recovery",
                   f"worst bbox-diagonal deviation {worst:.4f} from 1.5 "
                   f"over 5 seeds (cap 0.03)")


# ---------------------------------------------------------------------------
# 09: axis-angle and Euler agree; every representation stays orthonormal


def test_rotation_representation_parity(request, clean_run, euler_run):
    med_aa = float(np.median(clean_run.final_epe))
    med_eu = float(np.median(euler_run.final_epe))
    ratio = max(med_aa, med_eu) / max(min(med_aa, med_eu), 1e-12)

    rng = np.random.default_rng(0)
    worst_dev = 0.0
    for repr_ in RotationRepr:
        params = rng.normal(scale=2.0, size=(100_000, repr_.param_count))
        rot = rotation_from_repr(repr_, params)
        dev = np.einsum("nij,nik->njk", rot, rot) - np.eye(3)
        worst_dev = max(worst_dev, float(np.abs(dev).max()))

    ok = ratio <= 1.2 and worst_dev < 1e-9
    assert _report(request, ok, "09 rotation parity",
                   f"median EPE {med_aa:.4f} axis-angle vs {med_eu:.4f} euler "
                   f"(ratio {ratio:.3f}), worst RtR-I {worst_dev:.1e}")


# ---------------------------------------------------------------------------
# 10: fast paths equal their brute-force oracles exactly


def _straight_loop(pred, gt):
    n = len(pred)
    epe = 0.0
    n_strict = n_relaxed = n_out = 0
    for i in range(n):
        e = float(np.sqrt(sum((pred[i, j] - gt[i, j]) ** 2 for j in range(3))))
        g = float(np.sqrt(sum(gt[i, j] ** 2 for j in range(3))))
        rel = e / max(g, 1e-12)
        epe += e
        if rel < 0.025 or e < 0.025:
            n_strict += 1
        if rel < 0.05 or e < 0.05:
            n_relaxed += 1
        if rel > 0.30:
            n_out += 1
    return FlowMetrics(epe / n, 100.0 * n_strict / n,
                       100.0 * n_relaxed / n, 100.0 * n_out / n)


def test_fast_paths_equal_brute_force_oracles(request):
    rng = np.random.default_rng(7)
    nn_exact = True
    for _ in range(100):
        m = int(rng.integers(1, 4097))
        n = int(rng.integers(1, 512))
        ref = rng.normal(size=(m, 3))
        queries = rng.normal(size=(n, 3))
        kd_idx, _ = NnIndex(ref, method="kdtree").query(queries)
        br_idx, _ = NnIndex(ref, method="brute").query(queries)
        nn_exact = nn_exact and bool((kd_idx == br_idx).all())

    worst_metric_err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 400))
        gt = rng.normal(scale=0.2, size=(n, 3))
        pred = gt + rng.normal(scale=0.05, size=(n, 3))
        got = compute_metrics(pred, gt)
        want = _straight_loop(pred, gt)
        for field in ("epe", "acc_strict", "acc_relaxed", "outlier"):
            worst_metric_err = max(worst_metric_err,
                                   abs(getattr(got, field) - getattr(want, field)))

    ok = nn_exact and worst_metric_err < 1e-12
    assert _report(request, ok, "10 oracle equivalence",
                   f"kd==brute indices on 100 instances: {nn_exact}, "
                   f"worst metric deviation {worst_metric_err:.1e}")
