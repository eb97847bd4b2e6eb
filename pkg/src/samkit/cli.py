"""Command-line entry point.

Subcommands: ``run`` (single experiment from a config file), ``sweep``
(threshold-schedule ablation grid), ``noise`` (label-noise robustness
suite), ``diag`` (gradient-norm distribution / Q-Q / variance at a
checkpoint), ``check-bound`` (randomized full-batch descent-bound harness).
Any config key can be overridden with ``--set key=value``.  Exit code is
nonzero when any run diverged or failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from samkit import harness
from samkit.errors import ConfigurationError
from samkit.metrics import (
    check_gd_bound,
    gradient_variance,
    qq_points,
    run_full_batch,
    sample_grad_norms,
)
from samkit.models import LANDSCAPES, AnalyticLandscape


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _load(args) -> harness.ExperimentConfig:
    config = harness.load_config(args.config)
    if args.set:
        config = harness.apply_overrides(config, args.set)
    if args.outdir:
        config = replace(config, outdir=str(args.outdir))
    return config.validate()


def _outdir(config: harness.ExperimentConfig, args) -> Path:
    out = args.outdir or config.outdir or "runs"
    return Path(out)


def cmd_run(args) -> int:
    config = _load(args)
    seeds = [args.seed] if args.seed is not None else list(config.seeds)
    records = [harness.run_experiment(config, seed) for seed in seeds]
    outdir = _outdir(config, args)
    written, errors = harness.emit_reports(records, outdir)
    for record in records:
        status = "DIVERGED" if record.diverged else "ok"
        print(
            f"{record.run_id}: {status} %SAM={record.sam_pct:.1f} "
            f"test_acc={record.epoch_test_acc[-1] if record.epoch_test_acc else float('nan'):.4f} "
            f"grad_evals={record.grad_evals}"
        )
        if config.save_checkpoint and record.final_w is not None:
            manifest = {
                "widths": list(record.model_widths),
                "activation": record.config.activation,
                "loss": record.config.loss,
                "seed": record.seed,
            }
            harness.save_checkpoint(outdir / f"{record.run_id}.ckpt", record.final_w, manifest)
    for err in errors:
        print(f"write failed: {err['path']}: {err['error']}", file=sys.stderr)
    print(f"wrote {len(written)} files to {outdir}")
    return 1 if (errors or any(r.diverged for r in records)) else 0


def cmd_sweep(args) -> int:
    config = _load(args)
    configs = harness.lambda_grid(
        config,
        _parse_floats(args.lambda1_grid),
        _parse_floats(args.lambda2_grid),
        ordered_only=not args.unordered,
    )
    # optional radius / reuse-coefficient grids multiply the cell list
    if args.rho_grid:
        configs = [replace(c, rho=r) for c in configs for r in _parse_floats(args.rho_grid)]
    if args.alpha_grid:
        configs = [replace(c, alpha=a) for c in configs for a in _parse_floats(args.alpha_grid)]
    seeds = _parse_ints(args.seeds) if args.seeds else list(config.seeds)
    result = harness.sweep(configs, seeds, max_workers=args.workers)
    outdir = _outdir(config, args)
    harness.emit_reports(result.records, outdir)
    path = harness.emit_sweep_table(result.table, outdir)
    for row in result.table:
        print(
            f"lambda1={row['lambda1']:+.1f} lambda2={row['lambda2']:+.1f} "
            f"%SAM={row['sam_pct_mean']:.1f}+-{row['sam_pct_std']:.1f} "
            f"test_acc={row['test_acc_mean']:.4f}"
        )
    print(f"sweep table: {path}")
    for failure in result.failures:
        print(f"failed: {failure}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_noise(args) -> int:
    config = _load(args)
    algorithms = args.algorithms.split(",") if args.algorithms else list(harness.ALGORITHMS)
    result = harness.noise_robustness_suite(
        config,
        noise_levels=_parse_floats(args.levels),
        algorithms=algorithms,
        seeds=_parse_ints(args.seeds) if args.seeds else None,
        looksam_period=args.looksam_period,
        max_workers=args.workers,
    )
    outdir = _outdir(config, args)
    harness.emit_reports(result.records, outdir)
    path = harness.emit_sweep_table(result.table, outdir, name="noise.csv")
    for row in result.table:
        print(
            f"noise={row['noise']:.1f} {row['algorithm']:>11}: "
            f"test_acc={row['test_acc_mean']:.4f} train_acc={row['train_acc_mean']:.4f} "
            f"%SAM={row['sam_pct_mean']:.1f}"
        )
    print(f"noise table: {path}")
    for failure in result.failures:
        print(f"failed: {failure}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_diag(args) -> int:
    config = _load(args)
    w, manifest = harness.load_checkpoint(args.checkpoint)
    train_set, _, _ = harness.prepare_splits(config, int(manifest.get("seed", config.seeds[0])))
    model = harness.build_model(config, train_set)
    if model.n_params != w.size:
        raise ConfigurationError(
            f"checkpoint has {w.size} parameters, config model needs {model.n_params}"
        )
    batch = args.batch_size or config.batch_size
    norms = sample_grad_norms(model, w, train_set, batch, args.samples, seed=args.seed)
    qq = qq_points(norms)
    report = gradient_variance(model, w, train_set, batch, args.samples, seed=args.seed)
    outdir = _outdir(config, args)
    outdir.mkdir(parents=True, exist_ok=True)
    norms_path = outdir / "diag_norms.csv"
    with norms_path.open("w", encoding="utf-8") as fh:
        fh.write("grad_sq\n")
        fh.writelines(f"{repr(float(v))}\n" for v in norms)
    qq_path = outdir / "diag_qq.csv"
    with qq_path.open("w", encoding="utf-8") as fh:
        fh.write("theoretical,sample\n")
        for t, s in zip(qq.theoretical_quantiles, qq.sample_quantiles):
            fh.write(f"{repr(float(t))},{repr(float(s))}\n")
    var_path = outdir / "diag_variance.csv"
    with var_path.open("w", encoding="utf-8") as fh:
        fh.write("n_batches,mean_batch_grad_sq,full_grad_sq,variance,direct_variance,se_direct\n")
        fh.write(
            f"{report.n_batches},{report.mean_batch_grad_sq!r},{report.full_grad_sq!r},"
            f"{report.variance!r},{report.direct_variance!r},{report.se_direct!r}\n"
        )
    summary_path = outdir / "diag_summary.json"
    summary_path.write_text(
        json.dumps(
            {
                "checkpoint": str(args.checkpoint),
                "samples": int(args.samples),
                "batch_size": int(batch),
                "qq_correlation": qq.correlation,
                "variance": report.variance,
                "direct_variance": report.direct_variance,
                "full_grad_sq": report.full_grad_sq,
                "identity_holds_2se": report.identity_holds(2.0),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"qq correlation: {qq.correlation:.4f}")
    print(f"gradient variance: {report.variance:.6e} (direct {report.direct_variance:.6e})")
    print(f"wrote {norms_path}, {qq_path}, {var_path}, {summary_path}")
    return 0


def cmd_check_bound(args) -> int:
    rng = np.random.default_rng(args.seed)
    failures = 0
    for trial in range(args.trials):
        kind = LANDSCAPES[int(rng.integers(0, len(LANDSCAPES)))]
        landscape = AnalyticLandscape(kind, int(rng.integers(2, args.max_dim + 1)))
        lr = float(rng.uniform(0.05, 0.99)) / landscape.beta
        rho = float(rng.uniform(0.05, 0.99)) / (2.0 * landscape.beta)
        steps = int(rng.integers(10, args.max_steps + 1))
        xis = (rng.random(steps) < rng.uniform(0.0, 1.0)).astype(int)
        w0 = rng.uniform(-3.0, 3.0, size=landscape.dim)
        trajectory = run_full_batch(landscape, w0, lr, rho, xis)
        result = check_gd_bound(trajectory, landscape, lr, rho, xis)
        if not result.satisfied:
            failures += 1
            print(
                f"trial {trial}: VIOLATION {kind} dim={landscape.dim} "
                f"left={result.left:.6e} right={result.right:.6e}",
                file=sys.stderr,
            )
    print(f"bound satisfied in {args.trials - failures}/{args.trials} randomized runs")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="samkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key (repeatable)")
        p.add_argument("--outdir", default=None)

    p_run = sub.add_parser("run", help="run a single experiment")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="threshold-schedule ablation grid")
    common(p_sweep)
    p_sweep.add_argument("--lambda1-grid", default="-2,-1,0,1,2")
    p_sweep.add_argument("--lambda2-grid", default="-2,-1,0,1,2")
    p_sweep.add_argument("--rho-grid", default=None, help="optional radius grid")
    p_sweep.add_argument("--alpha-grid", default=None, help="optional reuse-coefficient grid")
    p_sweep.add_argument("--seeds", default=None, help="comma-separated run seeds")
    p_sweep.add_argument("--unordered", action="store_true",
                         help="keep cells with lambda1 > lambda2")
    p_sweep.add_argument("--workers", type=int, default=None,
                         help="thread-pool size for parallel runs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_noise = sub.add_parser("noise", help="label-noise robustness suite")
    common(p_noise)
    p_noise.add_argument("--levels", default="0.2,0.4,0.6,0.8")
    p_noise.add_argument("--algorithms", default=None, help="comma-separated subset")
    p_noise.add_argument("--seeds", default=None)
    p_noise.add_argument("--looksam-period", type=int, default=2)
    p_noise.add_argument("--workers", type=int, default=None,
                         help="thread-pool size for parallel runs")
    p_noise.set_defaults(func=cmd_noise)

    p_diag = sub.add_parser("diag", help="norm distribution / Q-Q / variance at a checkpoint")
    common(p_diag)
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--samples", type=int, default=400)
    p_diag.add_argument("--batch-size", type=int, default=None)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.set_defaults(func=cmd_diag)

    p_bound = sub.add_parser("check-bound", help="randomized full-batch bound harness")
    p_bound.add_argument("--trials", type=int, default=100)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.add_argument("--max-dim", type=int, default=10)
    p_bound.add_argument("--max-steps", type=int, default=100)
    p_bound.set_defaults(func=cmd_check_bound)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
