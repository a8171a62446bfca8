"""Layered polynomial graph-filter networks with manual reverse-mode gradients.

Each layer applies a K-tap filter ``sum_k W^k X H_k`` followed by a
pointwise activation.  Gradients are provided with respect to both the
coefficients and the input signal; the input gradient is what drives the
worst-case perturbation search in :mod:`graphdro.robust`.

A model whose layers all have ``k_taps == 1`` never touches the adjacency
and degenerates to a per-node (bias-free) MLP, which is how the MLP
baselines are expressed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import ConfigError, NumericalError
from .graph import Graph, as_signal

__all__ = [
    "LayerSpec",
    "GnnModel",
    "ForwardTape",
    "graph_conv",
    "forward",
    "backward",
    "forward_stack",
    "backward_stack",
    "init_model",
    "gnn_architecture",
    "mlp_architecture",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = {"identity": kernels.ACT_IDENTITY, "relu": kernels.ACT_RELU}


@dataclass(frozen=True)
class LayerSpec:
    """Shape and nonlinearity of one filter layer."""

    k_taps: int
    in_features: int
    out_features: int
    activation: str = "relu"

    def __post_init__(self):
        if self.k_taps < 1:
            raise ValueError("k_taps must be >= 1")
        if self.in_features < 1 or self.out_features < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class GnnModel:
    """Layer specs plus one (k_taps, in, out) coefficient array per layer."""

    layers: tuple
    coefficients: list = field(repr=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if len(self.layers) != len(self.coefficients):
            raise ValueError("one coefficient array required per layer")
        coeffs = []
        prev_out = None
        for spec, h in zip(self.layers, self.coefficients):
            h = np.ascontiguousarray(h, dtype=np.float64)
            expect = (spec.k_taps, spec.in_features, spec.out_features)
            if h.shape != expect:
                raise ValueError(f"coefficient shape {h.shape} != {expect}")
            if not np.isfinite(h).all():
                raise ValueError("non-finite coefficient")
            if prev_out is not None and spec.in_features != prev_out:
                raise ValueError("layer dimensions do not chain")
            prev_out = spec.out_features
            coeffs.append(h)
        self.coefficients = coeffs

    @property
    def input_dim(self):
        return self.layers[0].in_features

    @property
    def output_dim(self):
        return self.layers[-1].out_features

    def activation_codes(self):
        return tuple(_ACTIVATIONS[s.activation] for s in self.layers)

    def copy(self):
        return GnnModel(self.layers, [h.copy() for h in self.coefficients])


@dataclass
class ForwardTape:
    """Intermediates cached by a forward pass for the reverse pass.

    ``taps[l]`` holds the k-hop diffusions of layer l's input
    (shape (K_l, N, B, F_{l-1}); taps[l][0] is the layer input itself,
    so post-activations are all recoverable).  ``masks[l]`` is the relu
    gate of layer l, None for identity layers.
    """

    x0: np.ndarray
    taps: list
    masks: list
    output: np.ndarray

    @property
    def batch(self):
        return self.x0.shape[1]


def _stack_of(x, n_nodes):
    """Lift a 2-D (N, F) signal to the internal (N, 1, F) stack layout."""
    arr = as_signal(x, n_nodes)
    return np.ascontiguousarray(arr[:, None, :])


def graph_conv(g: Graph, x, h_list) -> np.ndarray:
    """K-tap filter: sum_k W^k X H_k for one layer, no activation.

    ``h_list`` is a sequence of K coefficient matrices (F, D); with K == 1
    this is exactly X @ H_0.
    """
    hs = [np.ascontiguousarray(h, dtype=np.float64) for h in h_list]
    if not hs:
        raise ValueError("need at least one coefficient matrix")
    for h in hs:
        if h.shape != hs[0].shape:
            raise ValueError("all taps must share one shape")
    stack = _stack_of(x, g.n_nodes)
    if hs[0].shape[0] != stack.shape[2]:
        raise ValueError(
            f"coefficients expect {hs[0].shape[0]} input features, signal has {stack.shape[2]}"
        )
    h = np.ascontiguousarray(np.stack(hs))
    out, _, _ = kernels.layer_forward(g.weights, stack, h, kernels.ACT_IDENTITY)
    return out[:, 0, :]


def forward_stack(model: GnnModel, g: Graph, x_stack) -> tuple:
    """Forward pass on a (N, B, F0) stack of B signals sharing one graph."""
    x_stack = np.ascontiguousarray(x_stack, dtype=np.float64)
    if x_stack.ndim != 3 or x_stack.shape[0] != g.n_nodes:
        raise ValueError(f"bad stack shape {x_stack.shape}")
    if x_stack.shape[2] != model.input_dim:
        raise ValueError(
            f"model expects {model.input_dim} input features, got {x_stack.shape[2]}"
        )
    out, taps, masks = kernels.model_forward(
        g.weights, x_stack, model.coefficients, model.activation_codes()
    )
    return out, ForwardTape(x0=x_stack, taps=taps, masks=masks, output=out)


def backward_stack(model: GnnModel, g: Graph, tape: ForwardTape, d_out) -> tuple:
    """Reverse pass on a stack; coefficient gradients are summed over B."""
    d_out = np.ascontiguousarray(d_out, dtype=np.float64)
    if d_out.shape != tape.output.shape:
        raise ValueError(f"d_out shape {d_out.shape} != output shape {tape.output.shape}")
    if len(tape.taps) != len(model.coefficients):
        raise ValueError("tape does not match model depth")
    for spec, taps in zip(model.layers, tape.taps):
        if taps.shape[0] != spec.k_taps or taps.shape[3] != spec.in_features:
            raise ValueError("tape does not match model shapes")
    return kernels.model_backward(
        g.weights, model.coefficients, model.activation_codes(), tape.taps, tape.masks, d_out
    )


def forward(model: GnnModel, g: Graph, x0) -> tuple:
    """Evaluate the network on one (N, F0) signal.

    Returns (output, tape); raises NumericalError if the output is not
    finite (divergence guard for training loops).
    """
    out, tape = forward_stack(model, g, _stack_of(x0, g.n_nodes))
    result = out[:, 0, :]
    if not np.isfinite(result).all():
        raise NumericalError("non-finite network output")
    return result, tape


def backward(model: GnnModel, g: Graph, tape: ForwardTape, d_output) -> tuple:
    """Gradients of <d_output, network output> for a single-signal tape.

    Returns (grad_params, grad_input): grad_params mirrors
    ``model.coefficients``; grad_input has the input signal's shape.
    """
    d_output = np.ascontiguousarray(d_output, dtype=np.float64)
    if d_output.ndim != 2:
        raise ValueError("d_output must be 2-D")
    if tape.batch != 1:
        raise ValueError("tape was produced by a stacked forward; use backward_stack")
    grads, d_x = backward_stack(model, g, tape, d_output[:, None, :])
    return grads, d_x[:, 0, :]


def init_model(specs, seed: int) -> GnnModel:
    """Draw coefficients i.i.d. uniform on [-a, a], a = sqrt(6/(K*F_in + F_out)).

    The fan-based bound keeps layer outputs at unit scale regardless of
    the tap count.  Deterministic for a given seed: layers are drawn in
    order, each as one C-order (K, F_in, F_out) block.
    """
    specs = tuple(specs)
    rng = np.random.default_rng(seed)
    coeffs = []
    for spec in specs:
        bound = np.sqrt(6.0 / (spec.k_taps * spec.in_features + spec.out_features))
        coeffs.append(
            rng.uniform(-bound, bound, size=(spec.k_taps, spec.in_features, spec.out_features))
        )
    return GnnModel(specs, coeffs)


def gnn_architecture(n_features, k_taps=2, hidden_dim=8, n_layers=2):
    """Layer specs for the graph model: relu hidden layers, identity scalar output."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    specs = []
    dims = [n_features] + [hidden_dim] * (n_layers - 1) + [1]
    for i in range(n_layers):
        act = "identity" if i == n_layers - 1 else "relu"
        specs.append(LayerSpec(k_taps, dims[i], dims[i + 1], act))
    return specs


def mlp_architecture(n_features, hidden_dim=8, n_layers=6):
    """Graph-blind baseline: same stack with every layer at k_taps = 1."""
    return [
        LayerSpec(1, s.in_features, s.out_features, s.activation)
        for s in gnn_architecture(n_features, 1, hidden_dim, n_layers)
    ]


def save_checkpoint(model: GnnModel, path, meta=None) -> None:
    """Write the model as JSON; floats round-trip exactly."""
    doc = {
        "layers": [
            {
                "k_taps": spec.k_taps,
                "in": spec.in_features,
                "out": spec.out_features,
                "activation": spec.activation,
                "coefficients": [h[k].ravel().tolist() for k in range(spec.k_taps)],
            }
            for spec, h in zip(model.layers, model.coefficients)
        ],
        "meta": {"seed": 0, "trained_epochs": 0, **(meta or {})},
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> tuple:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (model, meta).
    """
    with open(path) as fh:
        doc = json.load(fh)
    try:
        specs = []
        coeffs = []
        for layer in doc["layers"]:
            spec = LayerSpec(
                int(layer["k_taps"]), int(layer["in"]), int(layer["out"]), layer["activation"]
            )
            h = np.array(layer["coefficients"], dtype=np.float64).reshape(
                spec.k_taps, spec.in_features, spec.out_features
            )
            specs.append(spec)
            coeffs.append(h)
        return GnnModel(tuple(specs), coeffs), dict(doc["meta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint ({exc})") from exc
