"""Command-line entry point.

Commands: synth, train, sample, evaluate, test, info. Exit codes: 0 success,
1 usage error, 2 runtime error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fields as gf
from . import metrics, sampling, storage, training
from .config import PRESETS, RunConfig, UsageError, build_run_config
from .losses import DivergenceError, LossBreakdown, LossWeights

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_DIVERGENCE = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsgan",
        description="Stochastic extreme downscaling of gridded fields with progressive conditional GANs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="run-config file (key=value lines)")
        p.add_argument("--preset", choices=sorted(PRESETS), help="hyperparameter preset")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite non-empty outputs")

    p = sub.add_parser("synth", help="generate a synthetic dataset of smooth random fields")
    add_common(p)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--correlation-length", type=float, default=8.0)
    p.add_argument("--range", dest="value_range", default="0,1", help="low,high value range")

    p = sub.add_parser("train", help="train on a dataset directory")
    add_common(p)
    p.add_argument("--dataset", help="dataset directory (overrides config dataset_dir)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-scale", type=int, dest="max_scale")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--epochs-per-phase", type=int, dest="epochs_per_phase")
    p.add_argument("--n-critic", type=int, dest="n_critic")
    p.add_argument("--lambda-gp", type=float, dest="lambda_gp")
    p.add_argument("--lambda-center", type=float, dest="lambda_center")
    p.add_argument("--base-width", type=int, dest="base_width")
    p.add_argument("--min-width", type=int, dest="min_width")
    p.add_argument("--widths", dest="widths")
    p.add_argument("--z-channels", type=int, dest="z_channels")
    p.add_argument("--ema-decay", type=float, dest="ema_decay")
    p.add_argument("--train-split", dest="train_split")
    p.add_argument("--max-steps", type=int, dest="max_steps")

    p = sub.add_parser("sample", help="sample HR fields from a trained checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="LR grid file (.grd1)")
    p.add_argument("--n", type=int, default=1)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--center-only", action="store_true", help="write only the z=0 prediction")
    mode.add_argument("--ensemble", action="store_true", help="write n realizations")
    mode.add_argument("--stats", action="store_true", help="write ensemble mean/std maps")

    p = sub.add_parser("evaluate", help="score a test dataset with relative MSE and SWD")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="test dataset directory")
    p.add_argument("--limit", type=int, default=0, help="evaluate only the first N fields")
    p.add_argument("--variogram", action="store_true", help="also write semivariogram envelope CSVs")
    p.add_argument("--sample-index", type=int, default=0, help="which test field the variogram uses")
    p.add_argument("--n", type=int, default=1000, help="realizations for the variogram envelope")
    p.add_argument("--debug-identity", action="store_true",
                   help="score the truth against itself (report plumbing check)")
    p.add_argument("--plots", action="store_true", help="also render PNG plots")

    p = sub.add_parser("test", help="pseudo p-value plausibility test for a candidate HR grid")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="LR grid file (.grd1)")
    p.add_argument("--candidate", required=True, help="candidate HR grid file (.grd1)")
    p.add_argument("--n", type=int, default=999)
    p.add_argument("--statistic", choices=["residual", "swd", "both"], default="residual")

    p = sub.add_parser("info", help="describe a checkpoint or dataset")
    add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")

    return parser


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


def _overrides_from(args, keys) -> dict:
    return {k: getattr(args, k, None) for k in keys}


def cmd_synth(args) -> int:
    out = _require_out(args)
    if args.count < 1:
        raise UsageError("--count must be positive")
    try:
        lo, hi = (float(v) for v in args.value_range.split(","))
    except ValueError as exc:
        raise UsageError(f"--range must be low,high, got {args.value_range!r}") from exc
    try:
        cfg = gf.SyntheticFieldConfig(
            seed=args.seed if args.seed is not None else 0,
            count=args.count,
            size=args.size,
            channels=args.channels,
            correlation_length=args.correlation_length,
            value_range=(lo, hi),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    fields = gf.generate_synthetic(cfg)
    try:
        storage.write_dataset(fields, out, force=args.force)
    except FileExistsError as exc:
        raise UsageError(str(exc)) from exc
    print(f"wrote {len(fields)} fields to {out}")
    return EXIT_OK


_TRAIN_KEYS = (
    "seed", "max_scale", "batch_size", "learning_rate", "epochs_per_phase",
    "n_critic", "lambda_gp", "lambda_center", "base_width", "min_width",
    "widths", "z_channels", "ema_decay", "train_split", "max_steps",
)


def _prepare_training_data(cfg: RunConfig):
    fields = storage.read_dataset(cfg.dataset_dir)
    if not fields:
        raise UsageError(f"{cfg.dataset_dir}: empty dataset")
    side = fields[0].height
    expected = cfg.lr_size * cfg.max_scale
    if side != expected:
        raise UsageError(
            f"dataset fields are {side}x{side} but lr_size {cfg.lr_size} x max_scale "
            f"{cfg.max_scale} requires {expected}x{expected}"
        )
    train_fields, test_fields = gf.chronological_split(fields, cfg.split_cut())
    stats = gf.fit_normalization(train_fields)
    pairs = gf.make_pairs([stats.apply(f) for f in train_fields], cfg.max_scale)
    return pairs, stats, test_fields


def cmd_train(args) -> int:
    run_cfg = build_run_config(args.preset, args.config, _overrides_from(args, _TRAIN_KEYS))
    if args.dataset:
        run_cfg.dataset_dir = args.dataset
    if args.out:
        run_cfg.out_dir = args.out
    if not run_cfg.dataset_dir:
        raise UsageError("--dataset (or dataset_dir in the config) is required")
    if not run_cfg.out_dir:
        raise UsageError("--out (or out_dir in the config) is required")
    out = Path(run_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    pairs, stats, _ = _prepare_training_data(run_cfg)
    weights = LossWeights(lambda_gp=run_cfg.lambda_gp, lambda_center=run_cfg.lambda_center)
    settings = training.OptimizerSettings(
        learning_rate=run_cfg.learning_rate,
        batch_size=run_cfg.batch_size,
        n_critic=run_cfg.n_critic,
        ema_decay=run_cfg.ema_decay,
    )
    if args.resume:
        model_cfg = run_cfg.model_config(pairs[0].hr.channels)
        state = training.load_checkpoint(args.resume, expect_config=model_cfg)
    else:
        schedule = training.make_schedule(run_cfg.max_scale, run_cfg.epochs_per_phase)
        state = training.new_train_state(
            run_cfg.model_config(pairs[0].hr.channels), settings, schedule,
            run_cfg.seed, normalization=stats,
        )
    run_cfg.write_echo(out)
    log_path = out / "training_log.tsv"
    new_log = not log_path.exists() or not args.resume
    with open(log_path, "w" if new_log else "a", encoding="utf-8") as log:
        if new_log:
            log.write(LossBreakdown.TSV_HEADER + "\n")
        rows = training.run_training(
            state, pairs, weights, out_dir=out / "checkpoints",
            log_hook=lambda row: (log.write(row + "\n"), log.flush()),
            max_steps=run_cfg.max_steps or None,
        )
    training.save_checkpoint(state, out / "checkpoints" / "latest.ckpt")
    print(f"trained {len(rows)} steps; checkpoints in {out / 'checkpoints'}")
    return EXIT_OK


def _load_for_inference(path: str):
    state = training.load_checkpoint(path)
    return state.ema, state.normalization, state.config


def cmd_sample(args) -> int:
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    gen, stats, cfg = _load_for_inference(args.checkpoint)
    y = storage.read_grid(args.input)
    if y.height != cfg.lr_size or y.width != cfg.lr_size:
        raise UsageError(
            f"input grid is {y.height}x{y.width}; this checkpoint expects "
            f"{cfg.lr_size}x{cfg.lr_size}"
        )
    seed = args.seed if args.seed is not None else 0
    n = args.n
    if n < 1:
        raise UsageError("--n must be positive")
    wrote = []
    if args.center_only or not (args.ensemble or args.stats):
        center = sampling.sample_center(gen, y, stats)
        storage.write_grid(center, out / "center.grd1")
        wrote.append("center.grd1")
    if args.ensemble:
        for i, r in enumerate(sampling.iter_posterior(gen, y, n, seed, stats)):
            storage.write_grid(r, out / f"realization_{i:04d}.grd1")
        wrote.append(f"{n} realizations")
    if args.stats:
        stats_maps = sampling.posterior_stats(gen, y, n, seed, stats)
        storage.write_grid(stats_maps.mean_map, out / "mean.grd1")
        storage.write_grid(stats_maps.std_map, out / "std.grd1")
        wrote.append("mean.grd1 std.grd1")
    print(f"wrote {', '.join(wrote)} to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    gen, stats, cfg = _load_for_inference(args.checkpoint)
    test_fields = storage.read_dataset(args.dataset)
    if args.limit:
        test_fields = test_fields[: args.limit]
    expected = cfg.lr_size * cfg.max_scale
    rel_rows = []
    swd_params = metrics.SwdParams(seed=args.seed if args.seed is not None else 0)
    for i, truth in enumerate(test_fields):
        if truth.height != expected or truth.width != expected:
            raise UsageError(f"test field {i} is {truth.height}x{truth.width}, expected {expected}")
        y = gf.average_pool(truth, cfg.max_scale)
        pred = truth if args.debug_identity else sampling.sample_center(gen, y, stats)
        rel_rows.append((i, metrics.relative_mse(pred, truth), metrics.swd(pred, truth, swd_params)))
    report = out / "report.tsv"
    with open(report, "w", encoding="utf-8") as fh:
        fh.write("image_id\trel_mse\tswd\n")
        for i, rm, sw in rel_rows:
            fh.write(f"{i}\t{rm:.6g}\t{sw:.6g}\n")
        med_rm = float(np.median([r[1] for r in rel_rows]))
        med_sw = float(np.median([r[2] for r in rel_rows]))
        fh.write(f"median\t{med_rm:.6g}\t{med_sw:.6g}\n")
    print(f"median rel_mse {med_rm:.6g}  median swd {med_sw:.6g}  ({len(rel_rows)} fields)")
    if args.variogram:
        _write_variograms(args, out, gen, stats, cfg, test_fields)
    return EXIT_OK


def _write_variograms(args, out, gen, stats, cfg, test_fields) -> None:
    k = args.sample_index
    if not 0 <= k < len(test_fields):
        raise UsageError(f"--sample-index {k} out of range for {len(test_fields)} fields")
    truth = test_fields[k]
    y = gf.average_pool(truth, cfg.max_scale)
    center = sampling.sample_center(gen, y, stats)
    seed = args.seed if args.seed is not None else 0
    curves_by_ch: list[list] = [[] for _ in range(truth.channels)]
    for r in sampling.iter_posterior(gen, y, args.n, seed, stats):
        for ch in range(truth.channels):
            curves_by_ch[ch].append(metrics.semivariogram(r, channel=ch, max_pairs=50_000, seed=seed))
    for ch in range(truth.channels):
        center_curve = metrics.semivariogram(center, channel=ch, max_pairs=50_000, seed=seed)
        lower, upper = metrics.semivariogram_envelope(curves_by_ch[ch])
        path = out / f"variogram_s{k}_c{ch}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("lag,gamma,count,lower,upper\n")
            for lag, gm, cnt, lo, hi in zip(
                center_curve.lags, center_curve.gamma, center_curve.counts, lower, upper
            ):
                fh.write(f"{lag:.6g},{gm:.6g},{cnt},{lo:.6g},{hi:.6g}\n")
        if args.plots:
            _plot_variogram(path.with_suffix(".png"), center_curve, lower, upper)


def _plot_variogram(path, center_curve, lower, upper) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(center_curve.lags, lower, upper, alpha=0.3, color="green", label="ensemble envelope")
    ax.plot(center_curve.lags, center_curve.gamma, "r-", label="center prediction")
    ax.set_xlabel("lag (pixels)")
    ax.set_ylabel("semivariance")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_test(args) -> int:
    gen, stats, cfg = _load_for_inference(args.checkpoint)
    y = storage.read_grid(args.input)
    candidate = storage.read_grid(args.candidate)
    if y.height != cfg.lr_size or y.width != cfg.lr_size:
        raise UsageError(f"input grid must be {cfg.lr_size}x{cfg.lr_size}, got {y.height}x{y.width}")
    expected = cfg.lr_size * cfg.max_scale
    if candidate.height != expected or candidate.width != expected:
        raise UsageError(
            f"candidate grid must be {expected}x{expected}, got {candidate.height}x{candidate.width}"
        )
    seed = args.seed if args.seed is not None else 0
    names = {"residual": ["residual-l2"], "swd": ["swd"], "both": ["residual-l2", "swd"]}[args.statistic]
    lines = []
    for name in names:
        result = sampling.hypothesis_test(gen, y, candidate, args.n, seed, statistic=name, stats=stats)
        lines.append(f"{result.statistic_name}\t{result.d_test:.6g}\t{result.n}\t{result.pseudo_p:.6g}")
    print("statistic\td_test\tn\tpseudo_p")
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(
            "statistic\td_test\tn\tpseudo_p\n" + "\n".join(lines) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_info(args) -> int:
    if args.checkpoint:
        state = training.load_checkpoint(args.checkpoint)
        cfg = state.config
        print(f"checkpoint: {args.checkpoint}")
        print(f"  model: {cfg.in_channels} channels, lr_size {cfg.lr_size}, max_scale {cfg.max_scale}")
        print(f"  widths: base {cfg.base_width}, schedule {cfg.width_schedule}")
        print(f"  built stages: {state.generator.built_stages} of {cfg.num_stages}")
        print(f"  global step: {state.global_step}, phase {state.phase_index}/{len(state.schedule)}")
        print(f"  normalization: {'fitted' if state.normalization is not None else 'absent'}")
    elif args.dataset:
        fields = storage.read_dataset(args.dataset)
        f0 = fields[0]
        print(f"dataset: {args.dataset}")
        print(f"  {len(fields)} fields, {f0.channels} channels {f0.channel_names}, {f0.height}x{f0.width}")
        print(f"  first {f0.timestamp}, last {fields[-1].timestamp}")
    else:
        raise UsageError("info needs --checkpoint or --dataset")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "test": cmd_test,
    "info": cmd_info,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own message
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
