"""Modeling and calibration toolkit for MZI-mesh optical matrix multipliers."""

from .calibration import AmGradient, FitConfig, FitReport, am_loss, am_loss_gradient, fit_analytical_model
from .datagen import (
    Dataset,
    SplitPlan,
    SplitResult,
    acquire_dataset,
    filter_below,
    generate_synthetic,
    load_dataset,
    sample_voltages,
    save_dataset,
    split,
    weight_histogram,
)
from .mesh import (
    AnalyticalParams,
    MeshTopology,
    VirtualChipParams,
    default_crossbar_topology,
    default_virtual_chip,
    load_params,
    mzi_transmission,
    phases_from_voltages,
    predict_weights,
    predict_weights_batch,
    save_params,
    split_tree_topology,
    virtual_chip_measure,
    virtual_chip_measure_batch,
)
from .neural import (
    MlpParams,
    MlpSpec,
    TrainConfig,
    TrainResult,
    TransferResult,
    init_params,
    mlp_forward,
    mlp_forward_batch,
    nn_loss_and_gradient,
    pretrain_then_transfer,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
