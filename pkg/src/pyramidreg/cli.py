"""Command-line front end.

Subcommands:

* ``register``  fit a warp pyramid and write the warped source cloud
* ``eval``      score a warped cloud against a ground-truth warp
* ``synth``     generate a synthetic source/target/ground-truth triple
* ``transfer``  warp an arbitrary query cloud through a fitted pyramid

Exit codes: 0 success, 1 usage or file problems, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import __version__
from .core import WarpFieldType, build_config
from .errors import NumericalError, PyramidregError
from .fileio import (build_metrics_report, build_report, read_cloud,
                     read_correspondences, read_warp, write_cloud,
                     write_levels_csv, write_metrics_csv, write_report,
                     write_warp)
from .metrics import compute_metrics
from .mlp import save_weights
from .pyramid import register
from .synth import (DeformationSpec, add_noise, apply_deformation,
                    partial_indices, sample_surface)

_USAGE_EXIT = 1
_NUMERIC_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse, but usage problems exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(_USAGE_EXIT)


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def _parse_set_items(items) -> dict:
    overrides = {}
    for item in items or []:
        if "=" not in item:
            raise PyramidregError(f"--set expects key=value, got '{item}'")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _report_base(report_path) -> str:
    base, _ = os.path.splitext(str(report_path))
    return base


# ---------------------------------------------------------------------------
# register


def _do_register(source_path, target_path, corr=None, config=None, set_items=None,
                 seed=None, out=None, report=None, dump_levels=None,
                 dump_weights=None, echo=print) -> str:
    overrides = _parse_set_items(set_items)
    if seed is not None:
        overrides["rng_seed"] = int(seed)
    cfg = build_config(config, overrides)

    source = read_cloud(source_path)
    target = read_cloud(target_path)
    matches = None
    if corr is not None:
        matches = read_correspondences(corr, cfg.corr_conf_threshold)

    result = register(source, target, cfg, matches)

    for t in result.traces:
        echo(f"level {t.level}: {t.iterations} iterations, {t.stop_reason}, "
             f"cost {t.final_cost:.6e}, mean alpha {t.mean_alpha:.3f}")
    summary = (f"registered {source.count} points in {result.total_iterations} "
               f"iterations ({result.wall_seconds:.2f} s)")
    echo(summary)

    if out is not None:
        _ensure_parent(out)
        write_cloud(result.warped, out)
        echo(f"warped cloud -> {out}")
    if report is not None:
        from .plots import save_cost_trace, save_level_summary
        _ensure_parent(report)
        write_report(build_report(result), report)
        base = _report_base(report)
        write_levels_csv(build_report(result), base + ".csv")
        save_cost_trace(result.traces, base + "_cost.png")
        save_level_summary(result.traces, base + "_levels.png")
        echo(f"report -> {report} (+ .csv, _cost.png, _levels.png)")
    if dump_levels is not None:
        os.makedirs(dump_levels, exist_ok=True)
        snapshots = result.pyramid.apply_per_level(source.points)
        for k, snap in enumerate(snapshots, start=1):
            write_cloud(source.with_points(snap),
                        os.path.join(dump_levels, f"level_{k:02d}.ply"))
        echo(f"per-level clouds -> {dump_levels}")
    if dump_weights is not None:
        os.makedirs(dump_weights, exist_ok=True)
        for k, net in enumerate(result.pyramid.levels, start=1):
            save_weights(net, k, os.path.join(dump_weights, f"level_{k:02d}.mlpw"))
        echo(f"level weights -> {dump_weights}")
    return summary


_JOB_KEYS = {"source", "target", "corr", "config", "set", "seed", "out",
             "report", "dump_levels", "dump_weights"}


def _manifest_job(payload) -> dict:
    index, job = payload
    sink: list[str] = []
    try:
        set_items = [f"{k}={v}" for k, v in (job.get("set") or {}).items()]
        summary = _do_register(
            job["source"], job["target"], corr=job.get("corr"),
            config=job.get("config"), set_items=set_items, seed=job.get("seed"),
            out=job.get("out"), report=job.get("report"),
            dump_levels=job.get("dump_levels"), dump_weights=job.get("dump_weights"),
            echo=sink.append)
        return {"index": index, "code": 0, "message": summary}
    except NumericalError as exc:
        return {"index": index, "code": _NUMERIC_EXIT, "message": str(exc)}
    except (PyramidregError, OSError) as exc:
        return {"index": index, "code": _USAGE_EXIT, "message": str(exc)}


def _run_manifest(manifest_path, jobs: int) -> int:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if isinstance(manifest, dict):
        manifest = manifest.get("jobs")
    if not isinstance(manifest, list) or not manifest:
        raise PyramidregError(f"{manifest_path}: expected a non-empty job list")
    for i, job in enumerate(manifest):
        if not isinstance(job, dict):
            raise PyramidregError(f"{manifest_path}: job {i} is not an object")
        unknown = set(job) - _JOB_KEYS
        if unknown:
            raise PyramidregError(f"{manifest_path}: job {i} has unknown key(s) "
                                  f"{sorted(unknown)}")
        for key in ("source", "target"):
            if key not in job:
                raise PyramidregError(f"{manifest_path}: job {i} lacks '{key}'")

    payloads = list(enumerate(manifest))
    if jobs <= 1 or len(payloads) == 1:
        results = [_manifest_job(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_manifest_job, payloads))

    worst = 0
    for res in sorted(results, key=lambda r: r["index"]):
        status = "ok" if res["code"] == 0 else f"FAILED({res['code']})"
        print(f"job {res['index']}: {status}: {res['message']}")
        worst = max(worst, res["code"])
    return worst


def _cmd_register(args) -> int:
    if args.manifest is not None:
        if args.source or args.target:
            raise PyramidregError("--manifest replaces --source/--target")
        return _run_manifest(args.manifest, args.jobs)
    if not args.source or not args.target:
        raise PyramidregError("register needs --source and --target (or --manifest)")
    _do_register(args.source, args.target, corr=args.corr, config=args.config,
                 set_items=args.set, seed=args.seed, out=args.out,
                 report=args.report, dump_levels=args.dump_levels,
                 dump_weights=args.dump_weights)
    return 0


# ---------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    warped = read_cloud(args.warped)
    source = read_cloud(args.source)
    gt = read_warp(args.gt)
    if warped.count != source.count:
        raise PyramidregError(f"warped cloud has {warped.count} points, "
                              f"source has {source.count}")
    if gt.shape[0] != source.count:
        raise PyramidregError(f"ground-truth warp has {gt.shape[0]} rows, "
                              f"source has {source.count} points")
    pred = warped.points - source.points
    metrics = compute_metrics(pred, gt)
    print(f"EPE {metrics.epe:.6f}  AccS {metrics.acc_strict:.2f}%  "
          f"AccR {metrics.acc_relaxed:.2f}%  Outlier {metrics.outlier:.2f}%")
    if args.report is not None:
        from .plots import save_error_histogram
        _ensure_parent(args.report)
        write_report(build_metrics_report(metrics, source.count), args.report)
        base = _report_base(args.report)
        write_metrics_csv(metrics, base + ".csv")
        save_error_histogram(pred, gt, base + "_hist.png")
        print(f"report -> {args.report} (+ .csv, _hist.png)")
    return 0


# ---------------------------------------------------------------------------
# synth


def _parse_deform(text: str) -> tuple[str, dict]:
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    params: dict = {}
    if rest.strip():
        for chunk in rest.split(","):
            if "=" not in chunk:
                raise PyramidregError(f"--deform expects kind:key=val,... got '{text}'")
            key, value = (s.strip() for s in chunk.split("=", 1))
            params[key] = value if key == "axis" else float(value)
    return kind, params


def _cmd_synth(args) -> int:
    kind, params = _parse_deform(args.deform)
    spec = DeformationSpec(kind, params, seed=args.seed)
    cloud = sample_surface(args.shape, args.n, seed=args.seed, scale=args.scale)
    target, gt = apply_deformation(cloud, spec)
    source = cloud

    if args.overlap < 1.0:
        idx = partial_indices(source, args.overlap, seed=args.seed + 1)
        source = source.with_points(source.points[idx])
        gt = gt[idx]
    noise_ratio = noise_radius = 0.0
    if args.noise is not None:
        try:
            ratio_s, radius_s = args.noise.split(",")
            noise_ratio, noise_radius = float(ratio_s), float(radius_s)
        except ValueError:
            raise PyramidregError(f"--noise expects ratio,radius got '{args.noise}'") from None
        target = add_noise(target, noise_ratio, noise_radius, seed=args.seed + 2)

    os.makedirs(args.out_dir, exist_ok=True)
    write_cloud(source, os.path.join(args.out_dir, "source.ply"))
    write_cloud(target, os.path.join(args.out_dir, "target.ply"))
    write_warp(gt, os.path.join(args.out_dir, "gt.warp"))
    manifest = {
        "shape": args.shape, "n": args.n, "scale": args.scale,
        "deform": {"kind": kind, "params": params},
        "seed": args.seed, "overlap": args.overlap,
        "noise": {"ratio": noise_ratio, "radius": noise_radius},
    }
    with open(os.path.join(args.out_dir, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out_dir}: source.ply ({source.count} pts), "
          f"target.ply ({target.count} pts), gt.warp, spec.json")
    return 0


# ---------------------------------------------------------------------------
# transfer


def _cmd_transfer(args) -> int:
    overrides = _parse_set_items(args.set)
    if args.seed is not None:
        overrides["rng_seed"] = int(args.seed)
    cfg = build_config(args.config, overrides)
    if cfg.warp_type is not WarpFieldType.SIM3:
        cfg = cfg.replace(warp_type=WarpFieldType.SIM3)
    source = read_cloud(args.source)
    target = read_cloud(args.target)
    query = read_cloud(args.query)
    result = register(source, target, cfg)
    warped_query = result.pyramid.apply(query.points)
    _ensure_parent(args.out)
    write_cloud(query.with_points(warped_query), args.out)
    print(f"transferred {query.count} query points through "
          f"{len(result.pyramid.levels)} levels -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="pyramidreg",
                     description="Hierarchical non-rigid point cloud registration.")
    parser.add_argument("--version", action="version", version=f"pyramidreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("register", help="fit a warp pyramid to a cloud pair")
    p.add_argument("--source", help="source cloud (.ply or .xyz)")
    p.add_argument("--target", help="target cloud (.ply or .xyz)")
    p.add_argument("--corr", help="optional 'u v [confidence]' correspondence file")
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a single setting (repeatable)")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.add_argument("--out", help="write the warped source cloud here")
    p.add_argument("--report", help="write a JSON report (plus CSV and figures)")
    p.add_argument("--dump-levels", help="directory for per-level warped clouds")
    p.add_argument("--dump-weights", help="directory for per-level network weights")
    p.add_argument("--manifest", help="JSON job list; runs each job as a registration")
    p.add_argument("--jobs", type=int, default=1, help="manifest worker processes")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("eval", help="score a warped cloud against ground truth")
    p.add_argument("--warped", required=True, help="warped source cloud")
    p.add_argument("--source", required=True, help="original source cloud")
    p.add_argument("--gt", required=True, help="ground-truth warp file (dx dy dz rows)")
    p.add_argument("--report", help="write a JSON metrics report (plus CSV and figure)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic benchmark instance")
    p.add_argument("--shape", required=True, help="plane, cylinder, sphere, or torus")
    p.add_argument("--deform", required=True, metavar="KIND:K=V,...",
                   help="e.g. twist:axis=z,rate=1.2")
    p.add_argument("--n", type=int, default=2048, help="points to sample")
    p.add_argument("--scale", type=float, default=1.0, help="object scale multiplier")
    p.add_argument("--overlap", type=float, default=1.0,
                   help="source overlap fraction in (0, 1]")
    p.add_argument("--noise", metavar="RATIO,RADIUS",
                   help="perturb this fraction of target points inside a ball")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True,
                   help="writes source.ply, target.ply, gt.warp, spec.json")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("transfer", help="warp a query cloud with a fitted pyramid")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--query", required=True, help="cloud to carry through the warp")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.set_defaults(func=_cmd_transfer)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"pyramidreg: numerical failure: {exc}", file=sys.stderr)
        return _NUMERIC_EXIT
    except PyramidregError as exc:
        print(f"pyramidreg: error: {exc}", file=sys.stderr)
        return _USAGE_EXIT
    except OSError as exc:
        if getattr(exc, "filename", None):
            print(f"pyramidreg: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        else:
            print(f"pyramidreg: error: {exc}", file=sys.stderr)
        return _USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
