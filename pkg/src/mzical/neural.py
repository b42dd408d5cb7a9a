"""From-scratch MLP surrogate for the mesh, with freeze-masked retraining.

The network maps a heater-voltage vector (affinely scaled to [-1, 1]) to
the flattened weight matrix in dB: tanh hidden layers, identity output.
Training is full-batch limited-memory quasi-Newton on the mean squared dB
error plus L1 + L2 penalties on the unfrozen weight matrices (biases are
not regularized; L1 uses the sign subgradient with sign(0) = 0).

Transfer learning pre-trains all layers on plentiful synthetic data, then
freezes the first hidden layer and retrains the rest on scarce
measurements. Frozen layers are excluded from the optimization vector
entirely, so they come back bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .optimize import OptimizeResult, minimize_lbfgs

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: input_dim -> hidden_layers -> n_outputs * n_inputs."""

    input_dim: int
    hidden_layers: tuple[int, ...]
    n_outputs: int
    n_inputs: int
    activation: str = "tanh"
    v_min: float = 0.0
    v_max: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1 or self.n_outputs < 1 or self.n_inputs < 1:
            raise ValueError("dimensions must be >= 1")
        if len(self.hidden_layers) < 1 or any(h < 1 for h in self.hidden_layers):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activation is supported")
        if not self.v_max > self.v_min:
            raise ValueError("v_max must exceed v_min")

    @property
    def output_dim(self) -> int:
        return self.n_outputs * self.n_inputs

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_layers) + 1

    def scale_inputs(self, volts: np.ndarray) -> np.ndarray:
        return 2.0 * (volts - self.v_min) / (self.v_max - self.v_min) - 1.0


@dataclass
class MlpParams:
    """Per-layer weights (fan_in, fan_out), biases (fan_out,), freeze mask."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    freeze_mask: list[bool]

    def __post_init__(self):
        if not len(self.weights) == len(self.biases) == len(self.freeze_mask):
            raise ValueError("weights, biases and freeze_mask must have equal length")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weights {w.shape} and biases {b.shape} mismatch")
            if k > 0 and w.shape[0] != self.weights[k - 1].shape[1]:
                raise ValueError(f"layer {k} fan_in does not chain from layer {k - 1}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            freeze_mask=list(self.freeze_mask),
        )

    def with_freeze(self, mask: list[bool]) -> "MlpParams":
        if len(mask) != self.n_layers:
            raise ValueError("freeze mask length must equal layer count")
        out = self.copy()
        out.freeze_mask = [bool(m) for m in mask]
        return out


@dataclass(frozen=True)
class TrainConfig:
    lambda_l1: float = 5e-4
    lambda_l2: float = 9e-9
    max_iterations: int = 500
    history_size: int = 10
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    init_seed: int = 0
    convergence_tol: float = 1e-11
    max_seconds: float | None = 600.0

    def __post_init__(self):
        if self.lambda_l1 < 0.0 or self.lambda_l2 < 0.0:
            raise ValueError("regularization strengths must be >= 0")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


def init_params(spec: MlpSpec, seed) -> MlpParams:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights=weights, biases=biases, freeze_mask=[False] * len(weights))


def _forward_layers(spec: MlpSpec, params: MlpParams, volts: np.ndarray) -> list[np.ndarray]:
    """All layer activations; [0] is the scaled input, [-1] the output."""
    acts = [spec.scale_inputs(volts)]
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w + b
        acts.append(z if k == last else np.tanh(z))
    return acts


def mlp_forward(spec: MlpSpec, params: MlpParams, v) -> np.ndarray:
    """Predicted (n_outputs, n_inputs) dB matrix for one voltage vector."""
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.input_dim,):
        raise ValueError(f"voltage vector has shape {v.shape}, expected ({spec.input_dim},)")
    out = _forward_layers(spec, params, v[None, :])[-1][0]
    return out.reshape(spec.n_outputs, spec.n_inputs)


def mlp_forward_batch(spec: MlpSpec, params: MlpParams, volts) -> np.ndarray:
    """Predicted dB matrices for a (n_samples, input_dim) voltage batch."""
    volts = np.asarray(volts, dtype=float)
    if volts.ndim != 2 or volts.shape[1] != spec.input_dim:
        raise ValueError(f"voltage batch has shape {volts.shape}, expected (*, {spec.input_dim})")
    out = _forward_layers(spec, params, volts)[-1]
    return out.reshape(-1, spec.n_outputs, spec.n_inputs)


def _loss_and_gradients(
    spec: MlpSpec,
    params: MlpParams,
    volts: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
):
    """Full-batch loss and per-layer gradients; frozen layers get zeros."""
    acts = _forward_layers(spec, params, volts)
    err = acts[-1] - targets
    n_total = err.size
    loss = float(np.mean(err**2))

    delta = (2.0 / n_total) * err
    g_w = [np.zeros_like(w) for w in params.weights]
    g_b = [np.zeros_like(b) for b in params.biases]
    for k in range(params.n_layers - 1, -1, -1):
        g_w[k] = acts[k].T @ delta
        g_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * (1.0 - acts[k] ** 2)

    for k, frozen in enumerate(params.freeze_mask):
        w = params.weights[k]
        if frozen:
            g_w[k] = np.zeros_like(w)
            g_b[k] = np.zeros_like(params.biases[k])
        else:
            loss += config.lambda_l1 * float(np.sum(np.abs(w)))
            loss += config.lambda_l2 * float(np.sum(w**2))
            g_w[k] += config.lambda_l1 * np.sign(w) + 2.0 * config.lambda_l2 * w
    return loss, g_w, g_b


def nn_loss_and_gradient(
    spec: MlpSpec, params: MlpParams, batch: Dataset, config: TrainConfig
) -> tuple[float, MlpParams]:
    """Regularized loss and its gradient, shaped like the parameters.

    The returned MlpParams container holds gradient arrays; entries for
    frozen layers are exactly zero.
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    _check_batch(spec, batch)
    loss, g_w, g_b = _loss_and_gradients(
        spec, params, batch.voltages, batch.targets_flat(), config
    )
    return loss, MlpParams(weights=g_w, biases=g_b, freeze_mask=list(params.freeze_mask))


def _check_batch(spec: MlpSpec, data: Dataset) -> None:
    if data.n_mzi != spec.input_dim or data.weight_shape != (spec.n_outputs, spec.n_inputs):
        raise ValueError(
            f"dataset shape (n_mzi={data.n_mzi}, weights={data.weight_shape}) does not match "
            f"spec (input_dim={spec.input_dim}, output {spec.n_outputs}x{spec.n_inputs})"
        )


# ---------------------------------------------------------------------------
# Training


def _pack_unfrozen(params: MlpParams) -> np.ndarray:
    parts = []
    for k, frozen in enumerate(params.freeze_mask):
        if not frozen:
            parts.append(params.weights[k].ravel())
            parts.append(params.biases[k])
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)


def _unpack_unfrozen(x: np.ndarray, template: MlpParams) -> MlpParams:
    """Rebuild params from a packed vector; frozen arrays pass through."""
    weights, biases = [], []
    pos = 0
    for k, frozen in enumerate(template.freeze_mask):
        if frozen:
            weights.append(template.weights[k])
            biases.append(template.biases[k])
        else:
            w_shape = template.weights[k].shape
            n_w = w_shape[0] * w_shape[1]
            weights.append(x[pos : pos + n_w].reshape(w_shape))
            pos += n_w
            n_b = template.biases[k].shape[0]
            biases.append(x[pos : pos + n_b])
            pos += n_b
    return MlpParams(weights=weights, biases=biases, freeze_mask=list(template.freeze_mask))


@dataclass
class TrainResult:
    params: MlpParams
    loss_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def train(
    spec: MlpSpec, init: MlpParams, data: Dataset, config: TrainConfig
) -> TrainResult:
    """Full-batch quasi-Newton training; frozen layers are never touched.

    max_iterations = 0 returns the initial parameters unchanged. A failed
    line search returns the best parameters reached, flagged converged=False.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    _check_batch(spec, data)
    volts = data.voltages
    targets = data.targets_flat()

    if config.max_iterations == 0 or all(init.freeze_mask):
        loss, _, _ = _loss_and_gradients(spec, init, volts, targets, config)
        return TrainResult(params=init.copy(), loss_trace=[loss], iterations=0, converged=True)

    def objective(x):
        p = _unpack_unfrozen(x, init)
        loss, g_w, g_b = _loss_and_gradients(spec, p, volts, targets, config)
        return loss, _pack_unfrozen(
            MlpParams(weights=g_w, biases=g_b, freeze_mask=list(init.freeze_mask))
        )

    result: OptimizeResult = minimize_lbfgs(
        objective,
        _pack_unfrozen(init),
        max_iterations=config.max_iterations,
        history_size=config.history_size,
        convergence_tol=config.convergence_tol,
        armijo_c1=config.armijo_c1,
        backtrack_factor=config.backtrack_factor,
        max_backtracks=config.max_backtracks,
        max_seconds=config.max_seconds,
    )
    final = _unpack_unfrozen(result.x, init).copy()
    return TrainResult(
        params=final,
        loss_trace=result.loss_trace,
        iterations=result.iterations,
        converged=result.converged,
    )


@dataclass
class TransferResult:
    """Final model plus the phase-1 snapshot for freeze verification."""

    params: MlpParams
    pretrained: MlpParams
    pretrain_trace: list[float] = field(default_factory=list)
    transfer_trace: list[float] = field(default_factory=list)
    pretrain_converged: bool = False
    transfer_converged: bool = False


def pretrain_then_transfer(
    spec: MlpSpec,
    synthetic: Dataset,
    experimental: Dataset,
    config: TrainConfig,
    transfer_config: TrainConfig | None = None,
) -> TransferResult:
    """Pre-train on synthetic data, then retrain with layer 1 frozen.

    Phase 1 trains every layer on the synthetic set from a seeded init.
    Phase 2 freezes the first hidden layer's weights and biases and
    retrains the remaining layers on the experimental set; the returned
    first layer is bit-identical to the phase-1 output.
    """
    if len(synthetic) == 0 or len(experimental) == 0:
        raise ValueError("both datasets must be non-empty")
    transfer_config = transfer_config if transfer_config is not None else config
    phase1 = train(spec, init_params(spec, config.init_seed), synthetic, config)
    mask = [k == 0 for k in range(phase1.params.n_layers)]
    phase2 = train(spec, phase1.params.with_freeze(mask), experimental, transfer_config)
    return TransferResult(
        params=phase2.params,
        pretrained=phase1.params,
        pretrain_trace=phase1.loss_trace,
        transfer_trace=phase2.loss_trace,
        pretrain_converged=phase1.converged,
        transfer_converged=phase2.converged,
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    spec: MlpSpec, params: MlpParams, path: str | Path, metadata: dict | None = None
) -> None:
    """Versioned JSON checkpoint: architecture, arrays, freeze mask."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "mlp_checkpoint",
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_layers": list(spec.hidden_layers),
            "n_outputs": spec.n_outputs,
            "n_inputs": spec.n_inputs,
            "activation": spec.activation,
            "v_min": spec.v_min,
            "v_max": spec.v_max,
        },
        "layers": [
            {
                "weights": params.weights[k].tolist(),
                "biases": params.biases[k].tolist(),
                "frozen": bool(params.freeze_mask[k]),
            }
            for k in range(params.n_layers)
        ],
        "metadata": metadata or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_checkpoint(path: str | Path) -> tuple[MlpSpec, MlpParams, dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != SCHEMA_VERSION or doc.get("kind") != "mlp_checkpoint":
        raise ValueError(f"not a supported checkpoint: {path}")
    s = doc["spec"]
    spec = MlpSpec(
        input_dim=int(s["input_dim"]),
        hidden_layers=tuple(s["hidden_layers"]),
        n_outputs=int(s["n_outputs"]),
        n_inputs=int(s["n_inputs"]),
        activation=s["activation"],
        v_min=float(s["v_min"]),
        v_max=float(s["v_max"]),
    )
    params = MlpParams(
        weights=[np.array(layer["weights"], dtype=float) for layer in doc["layers"]],
        biases=[np.array(layer["biases"], dtype=float) for layer in doc["layers"]],
        freeze_mask=[bool(layer["frozen"]) for layer in doc["layers"]],
    )
    return spec, params, doc.get("metadata", {})
