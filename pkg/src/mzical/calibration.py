"""Fitting the analytical mesh model to measurements.

The loss is the mean of squared dB residuals over all samples and matrix
entries (its square root is the reported RMSE, matching the evaluation
metric). In dB the route product becomes a sum of per-MZI log terms, so
the analytic gradient is a short chain:

    pred_db = alpha_db + K * sum ln t,   K = 10 / ln 10
    dt/dphi = -sign * r * sin(phi) / 2
    dt/dr   = (r + sign * cos(phi)) / 2
    dr/der_db = sqrt(ER_lin) * ln(10) / (10 * (sqrt(ER_lin) + 1)^2)

The fit itself runs the shared limited-memory quasi-Newton minimizer from
a physics-informed start (phi2 diagonal pi/4 rad/V^2 so 0..2 V sweeps one
half-period, random phase offsets per start) with multi-start to cope
with the cosine's multimodality. The extinction ratio is optimized as
er_db = 5 + exp(u), keeping it above a 5 dB floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import Dataset
from .mesh import AnalyticalParams, MeshTopology
from .optimize import minimize_adam, minimize_lbfgs

K_DB = 10.0 / math.log(10.0)
ER_DB_FLOOR = 5.0
ER_DB_CEIL = 80.0


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 1200
    convergence_tol: float = 1e-14
    init_seed: int = 0
    n_starts: int = 5
    optimizer: str = "lbfgs"  # or "adam"
    history_size: int = 10
    adam_learning_rate: float = 0.02
    alpha_db_bounds: tuple[float, float] = (-np.inf, 0.0)
    init_er_db: float = 25.0
    init_phi2_diag: float = math.pi / 4.0
    align_grid: int = 16
    max_seconds: float | None = 600.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_tol > 0.0:
            raise ValueError("convergence_tol must be > 0")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class FitReport:
    final_params: AnalyticalParams
    train_rmse_db: float
    iterations_used: int
    converged: bool
    loss_trace: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kind": "fit_report",
            "params": self.final_params.to_dict(),
            "train_rmse_db": self.train_rmse_db,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "loss_trace": list(self.loss_trace),
        }


@dataclass(frozen=True)
class AmGradient:
    """Analytic loss gradient, laid out like the parameters themselves.

    Flat layout (to_vector): alpha_db row-major, then er_db, then phi0,
    then phi2 row-major.
    """

    alpha_db: np.ndarray
    er_db: float
    phi0: np.ndarray
    phi2: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.alpha_db.ravel(), [self.er_db], self.phi0, self.phi2.ravel()]
        )


def _check_data(data: Dataset, topology: MeshTopology) -> None:
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if data.n_mzi != topology.n_mzi or data.weight_shape != topology.shape:
        raise ValueError(
            f"dataset shape (n_mzi={data.n_mzi}, weights={data.weight_shape}) "
            f"does not match topology (n_mzi={topology.n_mzi}, shape={topology.shape})"
        )


def _loss_and_gradient(
    topology: MeshTopology,
    alpha_db: np.ndarray,
    er_db: float,
    phi0: np.ndarray,
    phi2: np.ndarray,
    volts: np.ndarray,
    meas_db: np.ndarray,
    want_gradient: bool = True,
):
    """Mean squared dB residual and its exact gradient on raw arrays."""
    n_samples = volts.shape[0]
    n_entries = topology.n_outputs * topology.n_inputs
    v_sq = volts**2
    phases = phi0[None, :] + v_sq @ phi2.T
    sqrt_er = 10.0 ** (er_db / 20.0)
    r = 1.0 - 2.0 / (sqrt_er + 1.0)
    cos_phi = np.cos(phases)
    base = r * r + 1.0
    cross = 2.0 * r * cos_phi
    used_signs = {sign for entries in topology.path_sets.values() for _, sign in entries}
    t_by_sign = {sign: (base + sign * cross) / 4.0 for sign in used_signs}
    log_t = {sign: 10.0 * np.log10(t) for sign, t in t_by_sign.items()}

    residual = np.empty((n_samples, topology.n_outputs, topology.n_inputs))
    for (i, j), entries in topology.path_sets.items():
        pred = np.full(n_samples, alpha_db[i, j])
        for m, sign in entries:
            pred = pred + log_t[sign][:, m]
        residual[:, i, j] = pred - meas_db[:, i, j]
    loss = float(np.mean(residual**2))
    if not want_gradient:
        return loss, None

    scale = 2.0 / (n_samples * n_entries)
    weighted = scale * residual  # (S, out, in)
    sin_phi = np.sin(phases)
    g_alpha = np.sum(weighted, axis=0)
    dphi_acc = np.zeros_like(phases)  # dL/dphi[s, m]
    g_r = 0.0
    for (i, j), entries in topology.path_sets.items():
        a = weighted[:, i, j]
        for m, sign in entries:
            t = t_by_sign[sign][:, m]
            dphi_acc[:, m] += a * K_DB * (-sign * r * sin_phi[:, m] / 2.0) / t
            g_r += float(np.dot(a, K_DB * (r + sign * cos_phi[:, m]) / (2.0 * t)))
    g_phi0 = np.sum(dphi_acc, axis=0)
    g_phi2 = dphi_acc.T @ v_sq
    dr_der = sqrt_er * math.log(10.0) / (10.0 * (sqrt_er + 1.0) ** 2)
    grad = AmGradient(alpha_db=g_alpha, er_db=g_r * dr_der, phi0=g_phi0, phi2=g_phi2)
    return loss, grad


def am_loss(params: AnalyticalParams, data: Dataset) -> float:
    """Mean over samples and entries of squared dB prediction error."""
    _check_data(data, params.topology)
    loss, _ = _loss_and_gradient(
        params.topology,
        params.alpha_db,
        params.er_db,
        params.phi0,
        params.phi2,
        data.voltages,
        data.weights_db,
        want_gradient=False,
    )
    return loss


def am_loss_gradient(params: AnalyticalParams, data: Dataset) -> AmGradient:
    """Exact analytic gradient of am_loss for every trainable scalar."""
    _check_data(data, params.topology)
    _, grad = _loss_and_gradient(
        params.topology,
        params.alpha_db,
        params.er_db,
        params.phi0,
        params.phi2,
        data.voltages,
        data.weights_db,
    )
    return grad


# ---------------------------------------------------------------------------
# Packed-vector objective and the multi-start fit

# Packed layout: [alpha_db (out*in), u_er (1), phi0 (n_mzi), phi2 (n_mzi^2)]
# with er_db = ER_DB_FLOOR + exp(u_er).


def _pack(alpha_db, u_er, phi0, phi2) -> np.ndarray:
    return np.concatenate([alpha_db.ravel(), [u_er], phi0, phi2.ravel()])


def _unpack(x: np.ndarray, topology: MeshTopology):
    n_out, n_in = topology.shape
    m = topology.n_mzi
    p = n_out * n_in
    alpha = x[:p].reshape(n_out, n_in)
    u_er = float(x[p])
    phi0 = x[p + 1 : p + 1 + m]
    phi2 = x[p + 1 + m :].reshape(m, m)
    return alpha, u_er, phi0, phi2


def _bounds(topology: MeshTopology, config: FitConfig):
    n = topology.n_outputs * topology.n_inputs + 1 + topology.n_mzi + topology.n_mzi**2
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    p = topology.n_outputs * topology.n_inputs
    lo[:p], hi[:p] = config.alpha_db_bounds
    hi[p] = math.log(ER_DB_CEIL - ER_DB_FLOOR)
    return lo, hi


def _align_phase_offsets(
    topology: MeshTopology,
    alpha_db: np.ndarray,
    er_db: float,
    phi0: np.ndarray,
    phi2: np.ndarray,
    volts: np.ndarray,
    meas_db: np.ndarray,
    n_grid: int,
    passes: int = 2,
) -> np.ndarray:
    """Coordinate-wise grid search over each phase offset.

    The squared-dB loss is multimodal in each phi0 coordinate (fringe
    misalignment near nulls creates deep spurious minima), so descent from
    a uniform random offset frequently strands. A few cheap coordinate
    sweeps over a 2pi grid land every offset in its global basin first.
    """
    phi0 = phi0.copy()
    offsets = 2.0 * np.pi * np.arange(n_grid) / n_grid

    def loss_at(p0):
        loss, _ = _loss_and_gradient(
            topology, alpha_db, er_db, p0, phi2, volts, meas_db, want_gradient=False
        )
        return loss

    for _ in range(passes):
        for m in range(topology.n_mzi):
            candidates = []
            for off in offsets:
                trial = phi0.copy()
                trial[m] = phi0[m] + off
                candidates.append((loss_at(trial), off))
            best_off = min(candidates)[1]
            phi0[m] += best_off
    return phi0


def fit_analytical_model(
    data: Dataset, topology: MeshTopology, config: FitConfig = FitConfig()
) -> FitReport:
    """Fit the analytical model to a dataset; deterministic per init_seed.

    Runs n_starts descents from physics-informed starts that differ only
    in their random phase offsets, keeping the lowest training loss. Each
    start grid-aligns the phase offsets, then runs the quasi-Newton
    minimizer in two stages (extinction ratio held at its init first,
    then released) to keep the ER from collapsing while phases are still
    misaligned. Divergence is reported via converged=False with the best
    point reached, never raised.
    """
    _check_data(data, topology)
    volts, meas = data.voltages, data.weights_db
    m = topology.n_mzi
    n_entries = topology.n_outputs * topology.n_inputs

    def objective(x):
        alpha, u_er, phi0, phi2 = _unpack(x, topology)
        er_db = ER_DB_FLOOR + math.exp(u_er)
        loss, grad = _loss_and_gradient(topology, alpha, er_db, phi0, phi2, volts, meas)
        g = _pack(grad.alpha_db, grad.er_db * (er_db - ER_DB_FLOOR), grad.phi0, grad.phi2)
        return loss, g

    def objective_er_fixed(x):
        loss, g = objective(x)
        g[n_entries] = 0.0
        return loss, g

    bounds = _bounds(topology, config)
    u_er0 = math.log(config.init_er_db - ER_DB_FLOOR)
    phi2_0 = np.diag(np.full(m, config.init_phi2_diag))
    start_seeds = np.random.SeedSequence(config.init_seed).spawn(config.n_starts)

    best = None
    for start_ss in start_seeds:
        rng = np.random.default_rng(start_ss)
        phi0_0 = rng.uniform(0.0, 2.0 * np.pi, size=m)
        alpha_0 = np.zeros(topology.shape)
        if config.align_grid > 1:
            phi0_0 = _align_phase_offsets(
                topology, alpha_0, config.init_er_db, phi0_0, phi2_0, volts, meas,
                n_grid=config.align_grid,
            )
        x0 = _pack(alpha_0, u_er0, phi0_0, phi2_0)
        if config.optimizer == "lbfgs":
            stage1_iters = min(300, max(0, config.max_iterations // 4))
            stage1 = minimize_lbfgs(
                objective_er_fixed,
                x0,
                max_iterations=stage1_iters,
                history_size=config.history_size,
                convergence_tol=config.convergence_tol,
                bounds=bounds,
                max_seconds=config.max_seconds,
            )
            stage2 = minimize_lbfgs(
                objective,
                stage1.x,
                max_iterations=config.max_iterations - stage1.iterations,
                history_size=config.history_size,
                convergence_tol=config.convergence_tol,
                bounds=bounds,
                max_seconds=config.max_seconds,
            )
            result = stage2
            result.iterations += stage1.iterations
            result.loss_trace = stage1.loss_trace + stage2.loss_trace[1:]
        else:
            result = minimize_adam(
                objective,
                x0,
                max_iterations=config.max_iterations,
                learning_rate=config.adam_learning_rate,
                convergence_tol=config.convergence_tol,
                bounds=bounds,
                max_seconds=config.max_seconds,
            )
        if best is None or result.fun < best.fun:
            best = result

    alpha, u_er, phi0, phi2 = _unpack(best.x, topology)
    params = AnalyticalParams(
        topology=topology,
        alpha_db=np.minimum(alpha, 0.0),
        er_db=ER_DB_FLOOR + math.exp(u_er),
        phi0=phi0,
        phi2=phi2,
    )
    return FitReport(
        final_params=params,
        train_rmse_db=math.sqrt(best.fun),
        iterations_used=best.iterations,
        converged=best.converged,
        loss_trace=best.loss_trace,
    )
