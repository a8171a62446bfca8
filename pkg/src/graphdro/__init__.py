"""Wasserstein-robust training of polynomial graph-filter networks.

Node-regression models are trained against worst-case feature
perturbations inside a transport-cost ball via the one-dimensional dual
of the inner maximization: each mini-batch sample is pushed uphill on a
penalized objective, then model weights and the penalty multiplier
descend jointly.  The package ships the graph/network primitives with
manual gradients, the robust and baseline trainers, a synthetic task
generator, independent numerical oracles, and a CLI pipeline.

Hot kernels run through a compiled Cython extension when available and
fall back to numpy otherwise; ``graphdro.BACKEND`` names the selection
(override with GRAPHDRO_KERNEL=cython|python).
"""

from ._backend import BACKEND, available_backends
from .errors import ConfigError, NumericalError
from .graph import (
    Graph,
    degree_matrix,
    diffuse,
    from_edge_list,
    laplacian,
    read_edge_list,
    spectral_radius_estimate,
    write_edge_list,
)
from .loss import LossSpec, Sample, laplacian_reg, psi, supervised_loss, transport_cost
from .nn import (
    ForwardTape,
    GnnModel,
    LayerSpec,
    backward,
    forward,
    gnn_architecture,
    graph_conv,
    init_model,
    load_checkpoint,
    mlp_architecture,
    save_checkpoint,
)
from .robust import (
    AdamState,
    RobustConfig,
    TrainReport,
    adam_step,
    curvature_probe,
    dual_objective,
    erm_train,
    inner_maximize,
    robust_train,
)
from .verify import finite_diff_grad_check, grid_inner_max, run_all, weak_duality_check

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "available_backends",
    "ConfigError",
    "NumericalError",
    "Graph",
    "from_edge_list",
    "degree_matrix",
    "laplacian",
    "diffuse",
    "spectral_radius_estimate",
    "read_edge_list",
    "write_edge_list",
    "LayerSpec",
    "GnnModel",
    "ForwardTape",
    "graph_conv",
    "forward",
    "backward",
    "init_model",
    "gnn_architecture",
    "mlp_architecture",
    "save_checkpoint",
    "load_checkpoint",
    "Sample",
    "LossSpec",
    "supervised_loss",
    "laplacian_reg",
    "transport_cost",
    "psi",
    "RobustConfig",
    "AdamState",
    "TrainReport",
    "adam_step",
    "inner_maximize",
    "dual_objective",
    "robust_train",
    "erm_train",
    "curvature_probe",
    "finite_diff_grad_check",
    "grid_inner_max",
    "weak_duality_check",
    "run_all",
    "__version__",
]
