"""End-to-end experiment orchestration and multi-seed statistics.

One experiment run compares four models on a shared held-out test set:

* am        - analytical model fitted to the per-seed 400-sample subset
* tl        - network pre-trained on synthetic data from that fitted
              model, then retrained on the subset with layer 1 frozen
* nn-subset - network trained from scratch on the subset
* nn-full   - network trained from scratch on the whole pool (run once)

Each seed redraws the subset and the model initializations; the test set
never changes within a run. Every random stream is derived from the
single config data_seed, so a rerun with the same config reproduces the
canonical results table byte for byte (wall times live in a separate
timings file for exactly that reason).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .calibration import FitConfig, FitReport, fit_analytical_model
from .datagen import (
    Dataset,
    SplitPlan,
    acquire_dataset,
    filter_below,
    generate_synthetic,
    split,
)
from .mesh import (
    AnalyticalParams,
    MeshTopology,
    VirtualChipParams,
    load_params,
    predict_weights_batch,
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

KNOWN_MODELS = ("am", "tl", "nn-subset", "nn-full")
PERCENTILES = (10, 25, 50, 75, 90)

# Stream ids for deriving independent child seeds from data_seed.
_STREAM_POOL = 0
_STREAM_SUBSET = 1
_STREAM_AM = 2
_STREAM_SYNTH = 3
_STREAM_TL = 4
_STREAM_SCRATCH = 5
_STREAM_FULL = 6


def child_seed(*parts: int) -> int:
    """Deterministic, platform-stable derived seed."""
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    chip_path: str
    output_dir: str
    plan: SplitPlan = SplitPlan()
    roster: tuple[str, ...] = KNOWN_MODELS
    n_seeds: int = 20
    synthetic_size: int = 50000
    filter_threshold_db: float = -60.0
    hidden_layers: tuple[int, ...] = (64, 64)
    fit: FitConfig = FitConfig()
    train_config: TrainConfig = TrainConfig()
    transfer_iterations: int | None = None  # defaults to train_config.max_iterations
    data_seed: int = 1234
    workers: int = 1
    save_models: bool = True

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if not self.roster:
            raise ValueError("roster must not be empty")
        unknown = [m for m in self.roster if m not in KNOWN_MODELS]
        if unknown:
            raise ValueError(f"unknown roster models {unknown}; known: {KNOWN_MODELS}")
        if self.synthetic_size < 1:
            raise ValueError("synthetic_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Hash of the result-determining fields only.

        output_dir, workers and save_models cannot change the numbers, so
        reruns into another directory (or with another worker count) still
        byte-reproduce the canonical results table.
        """
        doc = self.to_dict()
        for key in ("output_dir", "workers", "save_models"):
            doc.pop(key, None)
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class ResultRow:
    model: str
    seed: int
    train_rmse_db: float
    test_rmse_db: float
    wall_time_s: float
    converged: bool


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def models(self) -> list[str]:
        seen = []
        for row in self.rows:
            if row.model not in seen:
                seen.append(row.model)
        return seen

    def test_rmse(self, model: str) -> np.ndarray:
        return np.array([r.test_rmse_db for r in self.rows if r.model == model])

    def sorted_rows(self) -> list[ResultRow]:
        order = {m: k for k, m in enumerate(KNOWN_MODELS)}
        return sorted(self.rows, key=lambda r: (order.get(r.model, 99), r.seed))

    def to_csv_text(self, header_lines: list[str] | None = None) -> str:
        """Canonical, byte-reproducible serialization (no wall times)."""
        lines = [f"# {h}" for h in (header_lines or [])]
        lines.append("model,seed,train_rmse_db,test_rmse_db,converged")
        for r in self.sorted_rows():
            lines.append(
                f"{r.model},{r.seed},{r.train_rmse_db!r},{r.test_rmse_db!r},{r.converged}"
            )
        return "\n".join(lines) + "\n"

    def timings_csv_text(self, header_lines: list[str] | None = None) -> str:
        lines = [f"# {h}" for h in (header_lines or [])]
        lines.append("model,seed,wall_time_s")
        for r in self.sorted_rows():
            lines.append(f"{r.model},{r.seed},{r.wall_time_s:.3f}")
        return "\n".join(lines) + "\n"


def rmse_db(predicted, measured) -> float:
    """Root-mean-square dB error over matched weight matrices."""
    predicted = np.asarray(predicted, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if predicted.shape != measured.shape or predicted.size == 0:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {measured.shape}")
    return float(np.sqrt(np.mean((predicted - measured) ** 2)))


def percentile_summary(values) -> dict[str, float]:
    """p10/p25/p50/p75/p90 using linear-interpolation quantiles."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no values to summarize")
    pts = np.percentile(values, PERCENTILES)
    return {f"p{p}": float(v) for p, v in zip(PERCENTILES, pts)}


def summarize(table: ResultTable) -> dict[str, dict[str, float]]:
    """Per-model percentile summary of test RMSE."""
    return {m: percentile_summary(table.test_rmse(m)) for m in table.models()}


# ---------------------------------------------------------------------------
# Per-seed pipeline


def _mlp_spec(topology: MeshTopology, hidden_layers: tuple[int, ...]) -> MlpSpec:
    return MlpSpec(
        input_dim=topology.n_mzi,
        hidden_layers=hidden_layers,
        n_outputs=topology.n_outputs,
        n_inputs=topology.n_inputs,
    )


def _nn_rmse(spec: MlpSpec, params, data: Dataset) -> float:
    return rmse_db(mlp_forward_batch(spec, params, data.voltages), data.weights_db)


def _fit_am_for_seed(
    config: ExperimentConfig, topology: MeshTopology, subset: Dataset, seed_idx: int
) -> FitReport:
    fit_cfg = replace(config.fit, init_seed=child_seed(config.data_seed, _STREAM_AM, seed_idx))
    return fit_analytical_model(subset, topology, fit_cfg)


def _run_seed(args) -> tuple[list[ResultRow], dict]:
    """Everything that happens for one experiment seed; pure given args.

    A model failure is recorded in the artifacts and the remaining models
    still run.
    """
    config, chip, full_data, seed_idx = args
    topology = chip.topology
    plan = replace(config.plan, seed=child_seed(config.data_seed, _STREAM_SUBSET, seed_idx))
    parts = split(full_data, plan)
    subset, test = parts.subset, parts.test
    rows: list[ResultRow] = []
    artifacts: dict = {"seed": seed_idx, "plan_seed": plan.seed, "failures": {}}

    am_report = None
    if "am" in config.roster or "tl" in config.roster:
        try:
            t0 = time.monotonic()
            am_report = _fit_am_for_seed(config, topology, subset, seed_idx)
            am_wall = time.monotonic() - t0
            artifacts["am_fit"] = am_report
            if "am" in config.roster:
                pred = predict_weights_batch(am_report.final_params, test.voltages)
                rows.append(
                    ResultRow(
                        model="am",
                        seed=seed_idx,
                        train_rmse_db=am_report.train_rmse_db,
                        test_rmse_db=rmse_db(pred, test.weights_db),
                        wall_time_s=am_wall,
                        converged=am_report.converged,
                    )
                )
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            artifacts["failures"]["am"] = str(exc)

    spec = _mlp_spec(topology, config.hidden_layers)

    if "tl" in config.roster:
        try:
            if am_report is None:
                raise RuntimeError("analytical-model fit unavailable for synthetic generation")
            t0 = time.monotonic()
            synth_seed = child_seed(config.data_seed, _STREAM_SYNTH, seed_idx)
            synthetic = generate_synthetic(
                am_report.final_params, config.synthetic_size, synth_seed
            )
            synthetic, removed = filter_below(synthetic, config.filter_threshold_db)
            tl_cfg = replace(
                config.train_config,
                init_seed=child_seed(config.data_seed, _STREAM_TL, seed_idx),
            )
            transfer_cfg = (
                tl_cfg
                if config.transfer_iterations is None
                else replace(tl_cfg, max_iterations=config.transfer_iterations)
            )
            transfer = pretrain_then_transfer(spec, synthetic, subset, tl_cfg, transfer_cfg)
            wall = time.monotonic() - t0
            artifacts["tl_model"] = (spec, transfer.params)
            artifacts["synthetic_removed_fraction"] = removed
            artifacts["synthetic_seed"] = synth_seed
            rows.append(
                ResultRow(
                    model="tl",
                    seed=seed_idx,
                    train_rmse_db=_nn_rmse(spec, transfer.params, subset),
                    test_rmse_db=_nn_rmse(spec, transfer.params, test),
                    wall_time_s=wall,
                    converged=transfer.transfer_converged,
                )
            )
        except Exception as exc:  # noqa: BLE001
            artifacts["failures"]["tl"] = str(exc)

    if "nn-subset" in config.roster:
        try:
            t0 = time.monotonic()
            nn_cfg = replace(
                config.train_config,
                init_seed=child_seed(config.data_seed, _STREAM_SCRATCH, seed_idx),
            )
            result = train(spec, init_params(spec, nn_cfg.init_seed), subset, nn_cfg)
            wall = time.monotonic() - t0
            artifacts["nn_subset_model"] = (spec, result.params)
            rows.append(
                ResultRow(
                    model="nn-subset",
                    seed=seed_idx,
                    train_rmse_db=_nn_rmse(spec, result.params, subset),
                    test_rmse_db=_nn_rmse(spec, result.params, test),
                    wall_time_s=wall,
                    converged=result.converged,
                )
            )
        except Exception as exc:  # noqa: BLE001
            artifacts["failures"]["nn-subset"] = str(exc)

    return rows, artifacts


@dataclass
class ExperimentResult:
    table: ResultTable
    summaries: dict[str, dict[str, float]]
    config_hash: str
    test_hash: str
    seed_manifest: dict
    output_dir: Path


def _dataset_hash(data: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.voltages).tobytes())
    h.update(np.ascontiguousarray(data.weights_db).tobytes())
    return h.hexdigest()


def load_chip(path: str | Path) -> VirtualChipParams:
    chip = load_params(path)
    if isinstance(chip, AnalyticalParams):
        # Promote a plain model fixture to a mismatch-free, noiseless chip.
        chip = VirtualChipParams(
            base=chip,
            er_db_per_mzi=np.full(chip.topology.n_mzi, chip.er_db),
            phi4=np.zeros(chip.topology.n_mzi),
            noise_sigma_db=0.0,
        )
    return chip


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full multi-seed comparison and write all artifacts.

    Deterministic given the config: seeds for every random stream derive
    from data_seed, per-seed work is independent (safe to run in a worker
    pool), and rows are sorted before serialization so the worker count
    cannot change the output.
    """
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    chip = load_chip(config.chip_path)
    topology = chip.topology

    pool_seed = child_seed(config.data_seed, _STREAM_POOL)
    n_total = config.plan.train_pool_size + config.plan.test_size
    full_data = acquire_dataset(chip, n_total, pool_seed)
    test = split(full_data, replace(config.plan, seed=0)).test
    test_hash = _dataset_hash(test)

    payloads = [(config, chip, full_data, k) for k in range(config.n_seeds)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_run_seed, payloads))
    else:
        outcomes = [_run_seed(p) for p in payloads]

    table = ResultTable()
    seed_records = []
    for rows, artifacts in outcomes:
        table.rows.extend(rows)
        seed_records.append(artifacts)

    if "nn-full" in config.roster:
        t0 = time.monotonic()
        full_seed = child_seed(config.data_seed, _STREAM_FULL)
        nn_cfg = replace(config.train_config, init_seed=full_seed)
        pool_data = split(full_data, replace(config.plan, seed=0)).pool
        spec = _mlp_spec(topology, config.hidden_layers)
        result = train(spec, init_params(spec, full_seed), pool_data, nn_cfg)
        wall = time.monotonic() - t0
        table.rows.append(
            ResultRow(
                model="nn-full",
                seed=0,
                train_rmse_db=_nn_rmse(spec, result.params, pool_data),
                test_rmse_db=_nn_rmse(spec, result.params, test),
                wall_time_s=wall,
                converged=result.converged,
            )
        )
        if config.save_models:
            save_checkpoint(
                spec,
                result.params,
                outdir / "nn_full_model.json",
                metadata={"init_seed": full_seed, "trained_on": "pool"},
            )

    config_hash = config.config_hash()
    seed_manifest = {
        "data_seed": config.data_seed,
        "pool_seed": pool_seed,
        "seeds": [
            {
                "seed": rec["seed"],
                "plan_seed": rec["plan_seed"],
                "am_init_seed": child_seed(config.data_seed, _STREAM_AM, rec["seed"]),
                "synthetic_seed": rec.get("synthetic_seed"),
                "tl_init_seed": child_seed(config.data_seed, _STREAM_TL, rec["seed"]),
                "scratch_init_seed": child_seed(config.data_seed, _STREAM_SCRATCH, rec["seed"]),
            }
            for rec in seed_records
        ],
        "nn_full_init_seed": child_seed(config.data_seed, _STREAM_FULL),
    }

    _write_outputs(config, outdir, table, config_hash, test_hash, seed_manifest, seed_records)
    return ExperimentResult(
        table=table,
        summaries=summarize(table),
        config_hash=config_hash,
        test_hash=test_hash,
        seed_manifest=seed_manifest,
        output_dir=outdir,
    )


def _write_outputs(
    config: ExperimentConfig,
    outdir: Path,
    table: ResultTable,
    config_hash: str,
    test_hash: str,
    seed_manifest: dict,
    seed_records: list[dict],
) -> None:
    header = [f"config_hash={config_hash}", f"test_hash={test_hash}", f"data_seed={config.data_seed}"]
    (outdir / "results.csv").write_text(table.to_csv_text(header))
    (outdir / "timings.csv").write_text(table.timings_csv_text(header))
    with open(outdir / "config.json", "w") as f:
        json.dump({"config_hash": config_hash, "config": config.to_dict()}, f, indent=1)
        f.write("\n")
    summary = {
        "config_hash": config_hash,
        "test_hash": test_hash,
        "seed_manifest": seed_manifest,
        "percentiles": summarize(table),
        "synthetic_removed_fraction": {
            rec["seed"]: rec["synthetic_removed_fraction"]
            for rec in seed_records
            if "synthetic_removed_fraction" in rec
        },
        "failures": {rec["seed"]: rec["failures"] for rec in seed_records if rec["failures"]},
    }
    with open(outdir / "summary.json", "w") as f:
        json.dump(summary, f, indent=1)
        f.write("\n")

    if config.save_models:
        for rec in seed_records:
            seed_dir = outdir / "seeds" / f"seed_{rec['seed']:03d}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            if "am_fit" in rec:
                with open(seed_dir / "am_fit.json", "w") as f:
                    json.dump(rec["am_fit"].to_dict(), f, indent=1)
                    f.write("\n")
            for key, fname in (("tl_model", "tl_model.json"), ("nn_subset_model", "nn_subset_model.json")):
                if key in rec:
                    spec, params = rec[key]
                    save_checkpoint(spec, params, seed_dir / fname)


# ---------------------------------------------------------------------------
# Ordering checks and the hidden-width sweep


def check_ordering(
    table: ResultTable, min_tl_win_fraction: float = 0.8, tl_vs_full_margin_db: float = 1.0
) -> list[str]:
    """Accuracy-ordering assertions; returns a list of failure messages."""
    failures = []
    needed = ("am", "tl", "nn-subset", "nn-full")
    missing = [m for m in needed if len(table.test_rmse(m)) == 0]
    if missing:
        return [f"missing models in table: {missing}"]
    med = {m: float(np.median(table.test_rmse(m))) for m in needed}
    if not med["nn-full"] < med["tl"]:
        failures.append(f"median nn-full {med['nn-full']:.3f} !< tl {med['tl']:.3f}")
    if not med["tl"] < med["am"]:
        failures.append(f"median tl {med['tl']:.3f} !< am {med['am']:.3f}")
    if not med["am"] < med["nn-subset"]:
        failures.append(f"median am {med['am']:.3f} !< nn-subset {med['nn-subset']:.3f}")
    am_by_seed = {r.seed: r.test_rmse_db for r in table.rows if r.model == "am"}
    tl_by_seed = {r.seed: r.test_rmse_db for r in table.rows if r.model == "tl"}
    shared = sorted(set(am_by_seed) & set(tl_by_seed))
    if shared:
        wins = sum(tl_by_seed[s] < am_by_seed[s] for s in shared) / len(shared)
        if wins < min_tl_win_fraction:
            failures.append(
                f"tl beats am on {wins:.0%} of seeds, needs >= {min_tl_win_fraction:.0%}"
            )
    gap = med["tl"] - med["nn-full"]
    if gap > tl_vs_full_margin_db:
        failures.append(
            f"tl median is {gap:.3f} dB above nn-full median, allowed {tl_vs_full_margin_db}"
        )
    return failures


@dataclass
class SweepResult:
    best_width: dict[str, int]
    validation_rmse: dict[str, dict[int, float]]


def sweep_hidden_width(config: ExperimentConfig, widths: list[int]) -> SweepResult:
    """Pick the hidden width with minimum validation RMSE per NN model.

    Uses the first experiment seed only: models train on their training
    rows minus the validation carve and are scored on the validation
    rows. Ties break toward the smaller width; failed cells are skipped
    with a warning.
    """
    if not widths:
        raise ValueError("widths must not be empty")
    widths = sorted(int(w) for w in widths)
    chip = load_chip(config.chip_path)
    topology = chip.topology
    pool_seed = child_seed(config.data_seed, _STREAM_POOL)
    n_total = config.plan.train_pool_size + config.plan.test_size
    full_data = acquire_dataset(chip, n_total, pool_seed)
    plan = replace(config.plan, seed=child_seed(config.data_seed, _STREAM_SUBSET, 0))
    parts = split(full_data, plan)
    if len(parts.validation) == 0:
        raise ValueError("plan has an empty validation split; set validation_fraction > 0")

    nn_models = [m for m in config.roster if m != "am"]
    am_report = None
    if "tl" in nn_models:
        am_report = _fit_am_for_seed(config, topology, parts.train, 0)

    pool_minus_val = np.setdiff1d(
        np.arange(config.plan.train_pool_size), parts.validation_indices
    )
    train_sets = {
        "tl": parts.train,
        "nn-subset": parts.train,
        "nn-full": full_data.subset(pool_minus_val),
    }

    scores: dict[str, dict[int, float]] = {m: {} for m in nn_models}
    for width in widths:
        hidden = tuple(width for _ in config.hidden_layers)
        spec = _mlp_spec(topology, hidden)
        for model in nn_models:
            try:
                if model == "tl":
                    synthetic = generate_synthetic(
                        am_report.final_params,
                        config.synthetic_size,
                        child_seed(config.data_seed, _STREAM_SYNTH, 0),
                    )
                    synthetic, _ = filter_below(synthetic, config.filter_threshold_db)
                    cfg = replace(
                        config.train_config,
                        init_seed=child_seed(config.data_seed, _STREAM_TL, 0),
                    )
                    result = pretrain_then_transfer(spec, synthetic, train_sets[model], cfg)
                    params = result.params
                else:
                    stream = _STREAM_SCRATCH if model == "nn-subset" else _STREAM_FULL
                    cfg = replace(
                        config.train_config, init_seed=child_seed(config.data_seed, stream, 0)
                    )
                    params = train(
                        spec, init_params(spec, cfg.init_seed), train_sets[model], cfg
                    ).params
                scores[model][width] = _nn_rmse(spec, params, parts.validation)
            except Exception as exc:  # noqa: BLE001 - a failed cell must not kill the sweep
                warnings.warn(f"sweep cell ({model}, width={width}) failed: {exc}")

    best: dict[str, int] = {}
    for model in nn_models:
        if scores[model]:
            best[model] = pick_best_width(scores[model])
    return SweepResult(best_width=best, validation_rmse=scores)


def pick_best_width(scores: dict[int, float]) -> int:
    """Width with minimum score; ties resolve toward the smaller width."""
    if not scores:
        raise ValueError("no widths to choose from")
    best_w, best_v = None, None
    for w in sorted(scores):
        if best_v is None or scores[w] < best_v:
            best_w, best_v = w, scores[w]
    return best_w
