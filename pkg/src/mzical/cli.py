"""Command-line front end.

Subcommands: generate, fit-am, train-nn, transfer, experiment, sweep,
histogram. Relative output paths resolve under $MZICAL_OUTPUT_ROOT when
it is set. Exit codes: 0 success, 1 usage error, 2 failed --check
assertion, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .calibration import FitConfig, am_loss, fit_analytical_model
from .datagen import (
    SplitPlan,
    acquire_dataset,
    filter_below,
    generate_synthetic,
    load_dataset,
    save_dataset,
    save_histogram,
    weight_histogram,
)
from .mesh import (
    default_crossbar_topology,
    default_virtual_chip,
    load_params,
    save_params,
    split_tree_topology,
)
from .neural import (
    MlpSpec,
    TrainConfig,
    init_params,
    mlp_forward_batch,
    pretrain_then_transfer,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_RUNTIME = 3

OUTPUT_ROOT_ENV = "MZICAL_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the documented usage code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _out_path(raw: str) -> Path:
    p = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _add_plan_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pool", type=int, default=4400, help="training-pool size")
    p.add_argument("--test", type=int, default=700, help="held-out test-set size")
    p.add_argument("--subset", type=int, default=400, help="per-seed training subset size")
    p.add_argument("--val-frac", type=float, default=0.2, help="validation fraction of the subset")


def _plan_from(args) -> SplitPlan:
    return SplitPlan(
        train_pool_size=args.pool,
        test_size=args.test,
        subset_size=args.subset,
        validation_fraction=args.val_frac,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="mzical", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build a chip fixture and measurement datasets")
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--size", type=int, default=3, help="mesh size n (n x n matrix)")
    g.add_argument("--topology", choices=["crossbar", "split-tree"], default="crossbar")
    g.add_argument("--chip-seed", type=int, default=20230, help="chip parameter draw seed")
    g.add_argument("--noise-db", type=float, default=0.3, help="measurement noise sigma (dB)")
    g.add_argument("--data-seed", type=int, default=1234, help="measurement sampling seed")
    _add_plan_args(g)
    g.add_argument("--skip-datasets", action="store_true", help="write only the chip fixture")

    f = sub.add_parser("fit-am", help="fit the analytical model to a dataset")
    f.add_argument("--data", required=True, help="measurement CSV")
    f.add_argument("--chip", required=True, help="chip or model fixture providing the topology")
    f.add_argument("--out", default="fit_report.json")
    f.add_argument("--starts", type=int, default=5)
    f.add_argument("--iterations", type=int, default=1200)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--optimizer", choices=["lbfgs", "adam"], default="lbfgs")
    f.add_argument("--eval", dest="eval_data", help="optional dataset to report held-out RMSE on")
    f.add_argument("--no-figures", action="store_true")

    t = sub.add_parser("train-nn", help="train a network from scratch on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="nn_model.json")
    t.add_argument("--hidden", type=_parse_ints, default=(64, 64), help="widths, e.g. 64,64")
    t.add_argument("--iterations", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--l1", type=float, default=5e-4)
    t.add_argument("--l2", type=float, default=9e-9)
    t.add_argument("--eval", dest="eval_data")

    x = sub.add_parser("transfer", help="pre-train on synthetic data, retrain frozen on measurements")
    x.add_argument("--experimental", required=True, help="measurement CSV for retraining")
    x.add_argument("--synthetic", help="pre-generated synthetic CSV")
    x.add_argument("--am", dest="am_fit", help="fit-am report JSON to synthesize from")
    x.add_argument("--synthetic-size", type=int, default=50000)
    x.add_argument("--filter-db", type=float, default=-60.0)
    x.add_argument("--hidden", type=_parse_ints, default=(64, 64))
    x.add_argument("--iterations", type=int, default=500)
    x.add_argument("--transfer-iterations", type=int, default=None)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--l1", type=float, default=5e-4)
    x.add_argument("--l2", type=float, default=9e-9)
    x.add_argument("--out", default="tl_model.json")
    x.add_argument("--eval", dest="eval_data")

    e = sub.add_parser("experiment", help="run the multi-seed model comparison")
    e.add_argument("--chip", required=True, help="virtual-chip fixture JSON")
    e.add_argument("--out", default="experiment", help="output directory")
    e.add_argument("--seeds", type=int, default=20)
    e.add_argument("--roster", type=lambda s: tuple(s.split(",")), default=harness.KNOWN_MODELS)
    e.add_argument("--synthetic-size", type=int, default=50000)
    e.add_argument("--quick", action="store_true", help="10,000 synthetic samples, lighter training")
    e.add_argument("--filter-db", type=float, default=-60.0)
    e.add_argument("--hidden", type=_parse_ints, default=(64, 64))
    e.add_argument("--data-seed", type=int, default=1234)
    e.add_argument("--workers", type=int, default=1)
    _add_plan_args(e)
    e.add_argument("--fit-iterations", type=int, default=1200)
    e.add_argument("--train-iterations", type=int, default=500)
    e.add_argument("--transfer-iterations", type=int, default=None)
    e.add_argument("--no-models", action="store_true", help="skip per-seed model artifacts")
    e.add_argument("--no-figures", action="store_true")
    e.add_argument("--check", action="store_true", help="assert the accuracy ordering; exit 2 on failure")

    s = sub.add_parser("sweep", help="pick hidden widths on the validation split")
    s.add_argument("--chip", required=True)
    s.add_argument("--out", default="sweep")
    s.add_argument("--widths", type=_parse_ints, required=True, help="e.g. 16,32,64")
    s.add_argument("--roster", type=lambda s_: tuple(s_.split(",")), default=("tl", "nn-subset"))
    s.add_argument("--synthetic-size", type=int, default=10000)
    s.add_argument("--data-seed", type=int, default=1234)
    _add_plan_args(s)
    s.add_argument("--train-iterations", type=int, default=500)
    s.add_argument("--no-figures", action="store_true")

    h = sub.add_parser("histogram", help="weight histograms of one or more datasets")
    h.add_argument("data", nargs="+", help="dataset CSV files")
    h.add_argument("--out", default="histograms", help="output directory")
    h.add_argument("--bin-width", type=float, default=1.0)
    h.add_argument("--no-figures", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_generate(args) -> int:
    outdir = _out_path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    topology = (
        default_crossbar_topology(args.size)
        if args.topology == "crossbar"
        else split_tree_topology(args.size)
    )
    chip = default_virtual_chip(
        args.size, seed=args.chip_seed, topology=topology, noise_sigma_db=args.noise_db
    )
    chip_path = outdir / "chip.json"
    save_params(chip, chip_path)
    print(f"wrote {chip_path}")
    if not args.skip_datasets:
        plan = _plan_from(args)
        n = plan.train_pool_size + plan.test_size
        data = acquire_dataset(chip, n, args.data_seed)
        data_path = outdir / "measurements.csv"
        save_dataset(data, data_path)
        print(f"wrote {data_path} ({n} samples: pool {plan.train_pool_size} + test {plan.test_size})")
    return EXIT_OK


def _cmd_fit_am(args) -> int:
    data = load_dataset(args.data)
    chip = harness.load_chip(args.chip)
    config = FitConfig(
        max_iterations=args.iterations,
        init_seed=args.seed,
        n_starts=args.starts,
        optimizer=args.optimizer,
    )
    report = fit_analytical_model(data, chip.topology, config)
    out = _out_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    print(f"wrote {out}")
    print(f"train RMSE: {report.train_rmse_db:.4f} dB ({report.iterations_used} iterations)")
    if args.eval_data:
        held_out = load_dataset(args.eval_data)
        rmse = float(np.sqrt(am_loss(report.final_params, held_out)))
        print(f"eval RMSE: {rmse:.4f} dB on {len(held_out)} samples")
    if not args.no_figures:
        from .report import loss_trace_figure

        fig = loss_trace_figure({"am fit": report.loss_trace}, out.with_suffix(".png"))
        print(f"wrote {fig}")
    return EXIT_OK


def _load_fit_params(path: str):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("kind") != "fit_report":
        raise ValueError(f"{path} is not a fit report")
    from .mesh import AnalyticalParams

    return AnalyticalParams.from_dict(doc["params"])


def _spec_for(data, hidden) -> MlpSpec:
    n_out, n_in = data.weight_shape
    return MlpSpec(input_dim=data.n_mzi, hidden_layers=hidden, n_outputs=n_out, n_inputs=n_in)


def _report_eval(spec, params, eval_path) -> None:
    held_out = load_dataset(eval_path)
    pred = mlp_forward_batch(spec, params, held_out.voltages)
    print(f"eval RMSE: {harness.rmse_db(pred, held_out.weights_db):.4f} dB on {len(held_out)} samples")


def _cmd_train_nn(args) -> int:
    data = load_dataset(args.data)
    spec = _spec_for(data, args.hidden)
    config = TrainConfig(
        lambda_l1=args.l1, lambda_l2=args.l2, max_iterations=args.iterations, init_seed=args.seed
    )
    result = train(spec, init_params(spec, args.seed), data, config)
    out = _out_path(args.out)
    save_checkpoint(spec, result.params, out, metadata={"init_seed": args.seed})
    print(f"wrote {out}")
    pred = mlp_forward_batch(spec, result.params, data.voltages)
    print(f"train RMSE: {harness.rmse_db(pred, data.weights_db):.4f} dB")
    if args.eval_data:
        _report_eval(spec, result.params, args.eval_data)
    return EXIT_OK


def _cmd_transfer(args) -> int:
    experimental = load_dataset(args.experimental)
    if args.synthetic:
        synthetic = load_dataset(args.synthetic)
    elif args.am_fit:
        params = _load_fit_params(args.am_fit)
        synthetic = generate_synthetic(params, args.synthetic_size, seed=args.seed)
    else:
        raise ValueError("provide --synthetic or --am")
    synthetic, removed = filter_below(synthetic, args.filter_db)
    print(f"synthetic set: {len(synthetic)} samples after filtering ({removed:.2%} removed)")
    spec = _spec_for(experimental, args.hidden)
    config = TrainConfig(
        lambda_l1=args.l1, lambda_l2=args.l2, max_iterations=args.iterations, init_seed=args.seed
    )
    transfer_config = (
        config
        if args.transfer_iterations is None
        else replace(config, max_iterations=args.transfer_iterations)
    )
    result = pretrain_then_transfer(spec, synthetic, experimental, config, transfer_config)
    out = _out_path(args.out)
    save_checkpoint(spec, result.params, out, metadata={"init_seed": args.seed, "transfer": True})
    print(f"wrote {out}")
    if args.eval_data:
        _report_eval(spec, result.params, args.eval_data)
    return EXIT_OK


def _experiment_config(args) -> harness.ExperimentConfig:
    synthetic_size = 10000 if args.quick and args.synthetic_size == 50000 else args.synthetic_size
    return harness.ExperimentConfig(
        chip_path=str(args.chip),
        output_dir=str(_out_path(args.out)),
        plan=_plan_from(args),
        roster=args.roster,
        n_seeds=args.seeds,
        synthetic_size=synthetic_size,
        filter_threshold_db=args.filter_db,
        hidden_layers=args.hidden,
        fit=FitConfig(max_iterations=args.fit_iterations),
        train_config=TrainConfig(max_iterations=args.train_iterations),
        transfer_iterations=args.transfer_iterations,
        data_seed=args.data_seed,
        workers=args.workers,
        save_models=not args.no_models,
    )


def _cmd_experiment(args) -> int:
    config = _experiment_config(args)
    result = harness.run_experiment(config)
    print(f"results in {result.output_dir}")
    for model, pct in result.summaries.items():
        print(
            f"  {model:<10} median {pct['p50']:.3f} dB  "
            f"(p25 {pct['p25']:.3f}, p75 {pct['p75']:.3f})"
        )
    if not args.no_figures:
        from .report import rmse_box_figure

        fig = rmse_box_figure(result.table, result.output_dir / "rmse_boxplot.png")
        print(f"wrote {fig}")
    if args.check:
        failures = harness.check_ordering(result.table)
        if failures:
            for msg in failures:
                print(f"CHECK FAILED: {msg}", file=sys.stderr)
            return EXIT_CHECK_FAILED
        print("ordering checks passed")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    outdir = _out_path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    config = harness.ExperimentConfig(
        chip_path=str(args.chip),
        output_dir=str(outdir),
        plan=_plan_from(args),
        roster=tuple(args.roster),
        n_seeds=1,
        synthetic_size=args.synthetic_size,
        train_config=TrainConfig(max_iterations=args.train_iterations),
        data_seed=args.data_seed,
    )
    result = harness.sweep_hidden_width(config, list(args.widths))
    table_path = outdir / "sweep.csv"
    with open(table_path, "w") as fh:
        fh.write(f"# config_hash={config.config_hash()}\n")
        fh.write("model,width,validation_rmse_db\n")
        for model, per_width in sorted(result.validation_rmse.items()):
            for width, rmse in sorted(per_width.items()):
                fh.write(f"{model},{width},{rmse!r}\n")
    print(f"wrote {table_path}")
    for model, width in result.best_width.items():
        print(f"  {model}: best width {width}")
    with open(outdir / "best_widths.json", "w") as fh:
        json.dump({"config_hash": config.config_hash(), "best_width": result.best_width}, fh, indent=1)
        fh.write("\n")
    if not args.no_figures:
        from .report import sweep_figure

        fig_path = sweep_figure(result.validation_rmse, outdir / "sweep.png")
        print(f"wrote {fig_path}")
    return EXIT_OK


def _cmd_histogram(args) -> int:
    outdir = _out_path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    histograms = {}
    for data_file in args.data:
        data = load_dataset(data_file)
        hist = weight_histogram(data, args.bin_width)
        stem = Path(data_file).stem
        out_csv = outdir / f"{stem}_hist.csv"
        save_histogram(hist, out_csv)
        histograms[f"{stem} ({data.provenance})"] = hist
        print(f"wrote {out_csv}")
    if not args.no_figures:
        from .report import histogram_figure

        fig = histogram_figure(histograms, outdir / "histograms.png")
        print(f"wrote {fig}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "fit-am": _cmd_fit_am,
    "train-nn": _cmd_train_nn,
    "transfer": _cmd_transfer,
    "experiment": _cmd_experiment,
    "sweep": _cmd_sweep,
    "histogram": _cmd_histogram,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - map to the documented exit code
        print(f"mzical {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
