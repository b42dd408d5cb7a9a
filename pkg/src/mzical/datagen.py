"""Dataset acquisition, synthesis, filtering, splitting and persistence.

A dataset pairs heater-voltage vectors with measured (or synthesized)
weight matrices in dB. Measurements come from the virtual chip; synthetic
data comes from a fitted analytical model. Files are delimited text with
a JSON manifest sidecar so every artifact records its seed, clamp floor,
sampling box and topology hash.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .mesh import (
    AnalyticalParams,
    VirtualChipParams,
    predict_weights_batch,
    topology_hash,
    virtual_chip_measure_batch,
)

PROVENANCES = ("experimental-sim", "synthetic-am")
DEFAULT_FLOOR_DB = -80.0
DEFAULT_V_MAX = 2.0

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    """Paired voltages (S, n_mzi) and dB weights (S, n_outputs, n_inputs)."""

    voltages: np.ndarray
    weights_db: np.ndarray
    provenance: str
    seed: int
    floor_db: float = DEFAULT_FLOOR_DB
    v_max: float = DEFAULT_V_MAX
    topology_hash: str | None = None

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=float)
        w = np.asarray(self.weights_db, dtype=float)
        if v.ndim != 2 or w.ndim != 3 or v.shape[0] != w.shape[0]:
            raise ValueError(f"inconsistent shapes: voltages {v.shape}, weights {w.shape}")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("dataset entries must be finite")
        if np.any(w < self.floor_db):
            raise ValueError(f"weights below floor_db={self.floor_db}; clamp before constructing")
        if np.any(v < 0.0) or np.any(v > self.v_max):
            raise ValueError(f"voltages outside sampling box [0, {self.v_max}]")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        object.__setattr__(self, "voltages", v)
        object.__setattr__(self, "weights_db", w)

    def __len__(self) -> int:
        return self.voltages.shape[0]

    @property
    def n_mzi(self) -> int:
        return self.voltages.shape[1]

    @property
    def weight_shape(self) -> tuple[int, int]:
        return self.weights_db.shape[1:]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return replace(self, voltages=self.voltages[indices], weights_db=self.weights_db[indices])

    def targets_flat(self) -> np.ndarray:
        """Weights flattened to (S, n_outputs*n_inputs), row-major per matrix."""
        n_out, n_in = self.weights_db.shape[1:]
        return self.weights_db.reshape(len(self), n_out * n_in)


@dataclass(frozen=True)
class SplitPlan:
    """Pool/test/subset sizes of the measurement protocol."""

    train_pool_size: int = 4400
    test_size: int = 700
    subset_size: int = 400
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.train_pool_size, self.test_size, self.subset_size) < 1:
            raise ValueError("split sizes must be positive")
        if self.subset_size > self.train_pool_size:
            raise ValueError("subset_size must not exceed train_pool_size")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class SplitResult:
    """Disjoint train/validation/test views plus the full training pool.

    The test rows are the same for every plan seed; only the subset draw
    (train + validation) is reseeded. `subset` is the full drawn subset,
    i.e. train and validation concatenated in draw order. The *_indices
    arrays index into the dataset the split was computed from.
    """

    train: Dataset
    validation: Dataset
    test: Dataset
    pool: Dataset
    subset: Dataset
    train_indices: np.ndarray
    validation_indices: np.ndarray
    test_indices: np.ndarray


def sample_voltages(n: int, n_mzi: int, v_max: float, seed) -> np.ndarray:
    """n i.i.d. Uniform(0, v_max) voltage vectors, shape (n, n_mzi)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not v_max > 0.0:
        raise ValueError("v_max must be > 0")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, v_max, size=(n, n_mzi))


def acquire_dataset(
    chip: VirtualChipParams,
    n: int,
    seed: int,
    v_max: float = DEFAULT_V_MAX,
    floor_db: float = DEFAULT_FLOOR_DB,
) -> Dataset:
    """Sample voltages and measure them on the virtual chip.

    The sampling and measurement-noise streams are independent children of
    `seed`. Weights are clamped at floor_db (detector floor) on creation.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    sample_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    volts = sample_voltages(n, chip.topology.n_mzi, v_max, sample_ss)
    weights = virtual_chip_measure_batch(chip, volts, noise_ss)
    return Dataset(
        voltages=volts,
        weights_db=np.maximum(weights, floor_db),
        provenance="experimental-sim",
        seed=int(seed),
        floor_db=floor_db,
        v_max=v_max,
        topology_hash=topology_hash(chip.topology),
    )


def generate_synthetic(
    am: AnalyticalParams,
    n: int,
    seed: int,
    v_max: float = DEFAULT_V_MAX,
    floor_db: float = DEFAULT_FLOOR_DB,
) -> Dataset:
    """Noiseless model-generated measurements at random voltages."""
    if n < 1:
        raise ValueError("n must be >= 1")
    volts = sample_voltages(n, am.topology.n_mzi, v_max, seed)
    weights = predict_weights_batch(am, volts)
    return Dataset(
        voltages=volts,
        weights_db=np.maximum(weights, floor_db),
        provenance="synthetic-am",
        seed=int(seed),
        floor_db=floor_db,
        v_max=v_max,
        topology_hash=topology_hash(am.topology),
    )


def filter_below(data: Dataset, threshold_db: float) -> tuple[Dataset, float]:
    """Drop every sample whose matrix has ANY entry below threshold_db.

    Whole samples are removed (one voltage vector maps to the full matrix
    jointly). Returns the filtered dataset and the removed fraction.
    """
    if math.isnan(threshold_db):
        raise ValueError("threshold_db must not be NaN")
    keep = ~np.any(data.weights_db < threshold_db, axis=(1, 2))
    removed = 1.0 - float(np.count_nonzero(keep)) / max(len(data), 1)
    return data.subset(np.flatnonzero(keep)), removed


def split(data: Dataset, plan: SplitPlan) -> SplitResult:
    """Carve pool/test from the dataset and draw the per-seed subset.

    Rows [0, train_pool_size) are the pool and the following test_size
    rows are the test set, so the test rows never depend on plan.seed.
    The subset is drawn from the pool without replacement; its tail
    (validation_fraction of subset_size) is the validation split.
    """
    needed = plan.train_pool_size + plan.test_size
    if len(data) < needed:
        raise ValueError(f"dataset has {len(data)} samples, plan needs {needed}")
    pool_idx = np.arange(plan.train_pool_size)
    test_idx = np.arange(plan.train_pool_size, needed)
    rng = np.random.default_rng(plan.seed)
    subset_idx = rng.choice(pool_idx, size=plan.subset_size, replace=False)
    n_val = int(round(plan.validation_fraction * plan.subset_size))
    train_idx = subset_idx[: plan.subset_size - n_val]
    val_idx = subset_idx[plan.subset_size - n_val :]
    return SplitResult(
        train=data.subset(train_idx),
        validation=data.subset(val_idx),
        test=data.subset(test_idx),
        pool=data.subset(pool_idx),
        subset=data.subset(subset_idx),
        train_indices=train_idx,
        validation_indices=val_idx,
        test_indices=test_idx,
    )


@dataclass(frozen=True)
class Histogram:
    """Per-bin densities; sum(density) * bin_width == 1."""

    bin_edges: np.ndarray
    density: np.ndarray

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.bin_centers.tolist(), self.density.tolist()))


def weight_histogram(data: Dataset, bin_width_db: float) -> Histogram:
    """Normalized histogram of all dB weights in the dataset.

    Bin edges are aligned to integer multiples of bin_width_db, so they
    are deterministic given the bin width.
    """
    if not bin_width_db > 0.0:
        raise ValueError("bin_width_db must be > 0")
    if len(data) == 0:
        raise ValueError("dataset is empty")
    w = data.weights_db.ravel()
    lo_k = math.floor(w.min() / bin_width_db)
    hi_k = math.floor(w.max() / bin_width_db) + 1
    edges = np.arange(lo_k, hi_k + 1) * bin_width_db
    density, edges = np.histogram(w, bins=edges, density=True)
    return Histogram(bin_edges=edges, density=density)


def save_histogram(hist: Histogram, path: str | Path) -> None:
    """Two-column rows: bin center (dB), probability density (1/dB)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_center_db", "density_per_db"])
        for center, dens in hist.rows():
            writer.writerow([repr(center), repr(dens)])


# ---------------------------------------------------------------------------
# Persistence: delimited text + manifest sidecar


def manifest_path(data_path: str | Path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".manifest.json")


def save_dataset(data: Dataset, path: str | Path) -> None:
    """Write one row per sample: id, voltages, flattened dB weights.

    Floats are serialized with repr(), which round-trips float64 exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_out, n_in = data.weight_shape
    header = (
        ["sample_id"]
        + [f"v{k}" for k in range(data.n_mzi)]
        + [f"w_{i}_{j}" for i in range(n_out) for j in range(n_in)]
    )
    flat = data.targets_flat()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for s in range(len(data)):
            writer.writerow(
                [s]
                + [repr(float(x)) for x in data.voltages[s]]
                + [repr(float(x)) for x in flat[s]]
            )
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": "dataset_manifest",
        "data_file": path.name,
        "n_samples": len(data),
        "n_mzi": data.n_mzi,
        "n_outputs": n_out,
        "n_inputs": n_in,
        "provenance": data.provenance,
        "seed": data.seed,
        "floor_db": data.floor_db,
        "v_max": data.v_max,
        "topology_hash": data.topology_hash,
    }
    with open(manifest_path(path), "w") as f:
        json.dump(manifest, f, indent=1)
        f.write("\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(manifest_path(path)) as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema_version in {manifest_path(path)}")
    n_mzi = manifest["n_mzi"]
    n_out, n_in = manifest["n_outputs"], manifest["n_inputs"]
    volts, weights = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        for row in reader:
            volts.append([float(x) for x in row[1 : 1 + n_mzi]])
            weights.append([float(x) for x in row[1 + n_mzi :]])
    volts_arr = np.array(volts, dtype=float).reshape(-1, n_mzi)
    weights_arr = np.array(weights, dtype=float).reshape(-1, n_out, n_in)
    return Dataset(
        voltages=volts_arr,
        weights_db=weights_arr,
        provenance=manifest["provenance"],
        seed=int(manifest["seed"]),
        floor_db=float(manifest["floor_db"]),
        v_max=float(manifest["v_max"]),
        topology_hash=manifest.get("topology_hash"),
    )
