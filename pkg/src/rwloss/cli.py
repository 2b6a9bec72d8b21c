"""Command-line entry point: ``rwloss {maps,analyze,verify,metrics,train,cdf,gradcheck}``.

Exit codes: 0 success, 1 validation or check failure, 2 usage error.
Every command echoes its resolved configuration (and seed, where one applies)
as ``#``-prefixed lines before any results. Files are written atomically.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import GRADCHECK_LOSSES, gradcheck_loss, negcount, simplex_sweep, verify_prop
from .core import FormatError, DomainError, LabelGrid, read_grid, write_grid
from .loss import softmax
from .metrics import UndefinedDistanceError, metric_rows, write_metric_csv
from .rwmaps import KINDS, MapConfigError, MapSpec, build_map
from .trainer.data import TaskConfigError
from .trainer.harness import (
    LOSS_KINDS,
    ConfigError,
    RunConfig,
    cdf_rows,
    end_to_end_gradcheck,
    read_summary_csv,
    train_run,
    write_cdf_csv,
    write_epoch_csv,
    write_summary_csv,
)

LOSS_SIDE_TOL = 1e-6
END_TO_END_TOL = 1e-4
PROP_TOL = 1e-12


class CheckFailed(Exception):
    """A validation or check failed; maps to exit code 1."""


def _atomic(path, writer) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not all(np.isfinite(vals)):
        raise argparse.ArgumentTypeError(f"non-finite value in {text!r}")
    return vals


def _map_vector(text: str) -> list[float]:
    vals = _floats(text)
    if len(vals) < 2:
        raise argparse.ArgumentTypeError("a map vector needs at least two classes")
    return vals


def _seeds(text: str) -> list[int]:
    """``"7"``, ``"0,3,5"`` or a half-open range ``"0:20"``."""
    try:
        if ":" in text:
            lo, hi = (int(t) for t in text.split(":"))
            return list(range(lo, hi))
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _echo(command: str, **items) -> None:
    body = " ".join(f"{k}={v}" for k, v in items.items())
    print(f"# rwloss {__version__} {command} {body}".rstrip())


def _read_labels(path, num_classes=None, spacing=None) -> LabelGrid:
    grid = read_grid(path, num_classes=num_classes, spacing=spacing)
    if not isinstance(grid, LabelGrid):
        raise FormatError(f"{path}: expected a label grid, found a {grid.num_classes}-channel field")
    return grid


def _with_spacing(grid: LabelGrid, spacing) -> LabelGrid:
    if spacing is None:
        return grid
    return LabelGrid(grid.dims, grid.labels, grid.num_classes, spacing)


# ---------------------------------------------------------------------------
# commands


def cmd_maps(args) -> int:
    spec = MapSpec(args.kind, args.alpha, args.beta)
    grid = _with_spacing(_read_labels(args.labels, args.num_classes), args.spacing)
    _echo("maps", labels=args.labels, kind=spec.kind, alpha=spec.alpha, beta=spec.beta,
          num_classes=grid.num_classes, spacing=",".join(f"{s:g}" for s in grid.spacing), out=args.out)
    zmap = build_map(grid, spec)
    _atomic(args.out, lambda p: write_grid(p, zmap, args.dtype))
    print(f"wrote {zmap.size}x{zmap.num_classes} {spec.kind} map to {args.out}")
    return 0


def cmd_analyze_simplex(args) -> int:
    z = np.asarray(args.z, dtype=np.float64)
    _echo("analyze simplex", z=",".join(f"{v:g}" for v in z), resolution=args.resolution, out=args.out)
    if np.all(z == z[0]):
        print("warning: uniform map yields zero gradients", file=sys.stderr)
    sweep = simplex_sweep(z, args.resolution)
    if args.out:
        _atomic(args.out, sweep.to_csv)
    interior = int(sweep.interior.sum())
    print(f"interior_samples={interior} two_negative={sweep.n_two_negative}")
    print(f"two_negative_fraction={sweep.two_negative_fraction:.6f}")
    return 0


def cmd_analyze_negcount(args) -> int:
    spec = MapSpec(args.kind, args.alpha, args.beta)
    grid = _read_labels(args.labels, args.num_classes)
    logits = read_grid(args.logits)
    if isinstance(logits, LabelGrid):
        raise FormatError(f"{args.logits}: expected a logit field, found a label grid")
    if tuple(logits.dims) != tuple(grid.dims) or logits.num_classes != grid.num_classes:
        raise DomainError(f"logits {tuple(logits.dims)}x{logits.num_classes} do not match labels "
                          f"{tuple(grid.dims)}x{grid.num_classes}")
    _echo("analyze negcount", labels=args.labels, logits=args.logits, kind=spec.kind, alpha=spec.alpha,
          beta=spec.beta, out=args.out)
    probs = softmax(logits.values)
    z = build_map(grid, spec).values
    report = negcount(probs, z)
    if args.out:
        from .loss import rw_loss_grad
        grads = rw_loss_grad(probs, z, normalization="none")
        _atomic(args.out, lambda p: report.to_csv(p, probs, grads))
    print("negatives,pixels")
    for count, pixels in enumerate(report.histogram):
        print(f"{count},{int(pixels)}")
    print(f"two_or_more_fraction={report.fraction_two_or_more:.6f}")
    return 0


def cmd_verify(args) -> int:
    props = [1, 2, 3, 4, 5] if args.prop == "all" else [int(args.prop)]
    _echo("verify", prop=args.prop, instances=args.instances, seed=args.seed)
    ok = True
    for prop in props:
        res = verify_prop(prop, args.instances, args.seed)
        for draw in res.skipped:
            print(f"prop {prop}: skipped degenerate instance (draw {draw})")
        status = "PASS" if res.max_ratio <= PROP_TOL else "FAIL"
        ok &= status == "PASS"
        print(f"prop {prop}: instances={res.instances} skipped={len(res.skipped)} "
              f"max_discrepancy={res.max_discrepancy:.3e} max_per_pixel={res.max_ratio:.3e} {status}")
    if not ok:
        raise CheckFailed(f"discrepancy above {PROP_TOL:g} per pixel")
    return 0


def cmd_metrics(args) -> int:
    gt = _read_labels(args.gt, args.num_classes)
    pred = _read_labels(args.pred, args.num_classes)
    if tuple(pred.dims) != tuple(gt.dims):
        raise DomainError(f"prediction dims {tuple(pred.dims)} differ from ground truth {tuple(gt.dims)}")
    k = max(gt.num_classes, pred.num_classes)
    spacing = tuple(args.spacing) if args.spacing is not None else gt.spacing
    if len(spacing) != gt.ndim:
        raise DomainError(f"spacing needs {gt.ndim} values, got {len(spacing)}")
    run_id = args.run_id or Path(args.pred).stem
    _echo("metrics", pred=args.pred, gt=args.gt, num_classes=k, spacing=",".join(f"{s:g}" for s in spacing),
          run_id=run_id, out=args.out)
    rows = metric_rows(run_id, pred.as_array(), gt.as_array(), k, spacing)
    print("run_id,class,dice,hd_mm")
    for r in rows:
        print(f"{r['run_id']},{r['class']},{r['dice']:.6f},{r['hd_mm']:.6f}")
    if args.out:
        _atomic(args.out, lambda p: write_metric_csv(p, rows))
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    seeds = args.seeds if args.seeds is not None else [cfg.run_seed]
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.config).resolve().parent
    stem = Path(args.config).stem
    print(f"# rwloss {__version__} train config={args.config}")
    for line in cfg.to_text().splitlines():
        print(f"# {line}")
    print(f"# seeds={','.join(str(s) for s in seeds)}")
    from .trainer.data import generate_task
    data = generate_task(cfg.task, cfg.train_count, cfg.val_count)
    records = []
    for seed in seeds:
        rec = train_run(cfg, seed, data)
        records.append(rec)
        status = "diverged" if rec.diverged else ("converged" if rec.converged else "stuck")
        print(f"{rec.run_id} final_dice={rec.final_dice:.6f} {status}")
    epochs_path = out_dir / f"{stem}_epochs.csv"
    summary_path = out_dir / f"{stem}_summary.csv"
    _atomic(epochs_path, lambda p: write_epoch_csv(p, records))
    _atomic(summary_path, lambda p: write_summary_csv(p, records))
    n_conv = sum(r.converged for r in records)
    print(f"converged {n_conv}/{len(records)}; wrote {epochs_path.name}, {summary_path.name}")
    return 0


def cmd_cdf(args) -> int:
    paths = sorted(glob.glob(args.runs))
    _echo("cdf", runs=args.runs, files=len(paths), out=args.out)
    if not paths:
        raise CheckFailed(f"no summary files match {args.runs!r}")
    values = [final for path in paths for _, final, _ in read_summary_csv(path)]
    rows = cdf_rows(values)
    if args.out:
        _atomic(args.out, lambda p: write_cdf_csv(p, rows))
    print("dice,cdf")
    for d, c in rows:
        print(f"{d:.2f},{c:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.end_to_end:
        if args.loss not in LOSS_KINDS:
            raise DomainError(f"end-to-end check needs a training loss kind, one of {LOSS_KINDS}")
        _echo("gradcheck", loss=args.loss, mode="end_to_end", seed=args.seed, params=args.params)
        err = end_to_end_gradcheck(args.loss, args.seed, n_params=args.params)
        tol = END_TO_END_TOL
    else:
        if args.loss not in GRADCHECK_LOSSES:
            raise DomainError(f"loss-side check supports {GRADCHECK_LOSSES}")
        _echo("gradcheck", loss=args.loss, mode="loss", seed=args.seed, instances=args.instances)
        err = gradcheck_loss(args.loss, args.seed, args.instances)
        tol = LOSS_SIDE_TOL
    status = "PASS" if err < tol else "FAIL"
    print(f"max_rel_err={err:.3e} tol={tol:g} {status}")
    if status == "FAIL":
        raise CheckFailed(f"relative error {err:.3e} exceeds {tol:g}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rwloss", description="Region-wise loss toolkit")
    p.add_argument("--version", action="version", version=f"rwloss {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("maps", help="build a RW map from a label grid")
    m.add_argument("--labels", required=True, help="RWG label grid or 'H W K' text grid")
    m.add_argument("--kind", required=True, choices=KINDS)
    m.add_argument("--alpha", type=float)
    m.add_argument("--beta", type=float)
    m.add_argument("--out", required=True)
    m.add_argument("--num-classes", type=int, help="K for RWG label files (default: max label + 1)")
    m.add_argument("--spacing", type=_floats, help="override voxel spacing, e.g. 1,1.5")
    m.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    m.set_defaults(func=cmd_maps)

    a = sub.add_parser("analyze", help="gradient-sign analyses")
    asub = a.add_subparsers(dest="mode", required=True)
    s = asub.add_parser("simplex", help="sweep one map vector over the probability simplex")
    s.add_argument("--z", required=True, type=_map_vector, help="map vector, e.g. 12,4,-3")
    s.add_argument("--resolution", type=int, default=400)
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_simplex)
    n = asub.add_parser("negcount", help="per-pixel count of negative RW gradient components")
    n.add_argument("--labels", required=True)
    n.add_argument("--logits", required=True, help="RWG field with K channels")
    n.add_argument("--kind", required=True, choices=KINDS)
    n.add_argument("--alpha", type=float)
    n.add_argument("--beta", type=float)
    n.add_argument("--num-classes", type=int)
    n.add_argument("--out")
    n.set_defaults(func=cmd_analyze_negcount)

    v = sub.add_parser("verify", help="equivalence oracles for the classical losses")
    v.add_argument("--prop", required=True, choices=["1", "2", "3", "4", "5", "all"])
    v.add_argument("--instances", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    me = sub.add_parser("metrics", help="per-class Dice and Hausdorff distance")
    me.add_argument("--pred", required=True)
    me.add_argument("--gt", required=True)
    me.add_argument("--spacing", type=_floats)
    me.add_argument("--num-classes", type=int)
    me.add_argument("--run-id")
    me.add_argument("--out")
    me.set_defaults(func=cmd_metrics)

    t = sub.add_parser("train", help="train TinyNet from a key=value config")
    t.add_argument("--config", required=True)
    t.add_argument("--seeds", type=_seeds, help="override run.seed: '3', '0,4' or '0:20'")
    t.add_argument("--out-dir", help="directory for the CSVs (default: beside the config)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("cdf", help="empirical CDF of final Dice over summary CSVs")
    c.add_argument("--runs", required=True, help="glob of *_summary.csv files")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cdf)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--loss", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--instances", type=int, default=1)
    g.add_argument("--end-to-end", action="store_true", help="differentiate through TinyNet")
    g.add_argument("--params", type=int, default=200)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1
    except (FormatError, DomainError, MapConfigError, ConfigError, TaskConfigError,
            UndefinedDistanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
