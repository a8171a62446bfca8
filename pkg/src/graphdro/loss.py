"""Scalar objectives and their gradients.

Covers the masked supervised loss (squared / Huber), the Laplacian
smoothness penalty, the squared-Frobenius transport cost, and the
penalized per-sample objective maximized by the perturbation search:

    psi(xi) = data_loss(f(xi)) + gamma * (rho - cost(X, xi))

All functions return (value, gradient) pairs.  Batched variants operate
on node-major stacks and return one value per column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .graph import Graph, as_signal, laplacian

__all__ = [
    "Sample",
    "LossSpec",
    "supervised_loss",
    "supervised_loss_batch",
    "laplacian_reg",
    "transport_cost",
    "transport_cost_batch",
    "data_loss",
    "psi",
    "psi_batch",
    "stack_samples",
]


@dataclass
class Sample:
    """One training instance: features, full label vector, observed-node mask."""

    features: np.ndarray  # (N, F)
    labels: np.ndarray  # (N,)
    observed: np.ndarray  # (N,) bool

    def __post_init__(self):
        self.features = as_signal(self.features)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=bool)
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.observed.shape != (n,):
            raise ValueError("labels/observed must be length-N vectors")
        if not self.observed.any():
            raise ValueError("sample has no observed nodes")
        if not np.isfinite(self.labels[self.observed]).all():
            raise ValueError("non-finite label at an observed node")


@dataclass(frozen=True)
class LossSpec:
    """Supervised-loss settings: kind, Huber width, smoothness weight."""

    kind: str = "squared"
    huber_delta: float = 1.0
    lambda_reg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("squared", "huber"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")


def _residual_terms(res, spec: LossSpec):
    """Pointwise loss value and derivative for a residual array."""
    if spec.kind == "squared":
        return res * res, 2.0 * res
    delta = spec.huber_delta
    small = np.abs(res) <= delta
    vals = np.where(small, 0.5 * res * res, delta * np.abs(res) - 0.5 * delta * delta)
    grads = np.clip(res, -delta, delta)
    return vals, grads


def supervised_loss_batch(pred, labels, observed, spec: LossSpec):
    """Masked supervised loss per column of (N, B) arrays.

    Unobserved nodes contribute nothing to value or gradient; their label
    entries are never read.
    """
    res = np.where(observed, pred - labels, 0.0)
    vals, grads = _residual_terms(res, spec)
    vals = np.where(observed, vals, 0.0)
    grads = np.where(observed, grads, 0.0)
    return vals.sum(axis=0), grads


def supervised_loss(pred, sample: Sample, spec: LossSpec):
    """Masked supervised loss for one prediction vector; returns (value, grad)."""
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != sample.labels.shape:
        raise ValueError(f"pred shape {pred.shape} != labels shape {sample.labels.shape}")
    vals, grads = supervised_loss_batch(
        pred[:, None], sample.labels[:, None], sample.observed[:, None], spec
    )
    return float(vals[0]), grads[:, 0]


def laplacian_reg(g: Graph, pred):
    """Smoothness penalty sum_{n,n'} W[n,n'] (pred[n]-pred[n'])^2.

    Both orderings of each pair are counted, so the value equals
    2 * pred^T L pred and the gradient is 4 L pred.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (g.n_nodes,):
        raise ValueError(f"pred must have length {g.n_nodes}")
    lp = laplacian(g) @ pred
    return 2.0 * float(pred @ lp), 4.0 * lp


def transport_cost(x, xi):
    """Squared Frobenius distance between two signal matrices.

    Returns (value, grad_xi) with grad_xi = 2 (xi - x).
    """
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if x.shape != xi.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {xi.shape}")
    diff = xi - x
    return float((diff * diff).sum()), 2.0 * diff


def transport_cost_batch(x_stack, xi_stack):
    """Per-column squared Frobenius distances for (N, B, F) stacks."""
    diff = xi_stack - x_stack
    return (diff * diff).sum(axis=(0, 2)), 2.0 * diff


def _prediction_grad_batch(g, preds, labels, observed, spec: LossSpec):
    """Data-loss values and d(loss)/d(pred) per column, smoothness included."""
    vals, grads = supervised_loss_batch(preds, labels, observed, spec)
    if spec.lambda_reg > 0.0:
        lp = laplacian(g) @ preds
        vals = vals + spec.lambda_reg * 2.0 * (preds * lp).sum(axis=0)
        grads = grads + spec.lambda_reg * 4.0 * lp
    return vals, grads


def stack_samples(samples):
    """Stack a list of same-shape samples into node-major training arrays.

    Returns (features (N, B, F), labels (N, B), observed (N, B)).
    """
    if not samples:
        raise ValueError("empty sample list")
    feats = np.ascontiguousarray(np.stack([s.features for s in samples], axis=1))
    labels = np.ascontiguousarray(np.stack([s.labels for s in samples], axis=1))
    observed = np.ascontiguousarray(np.stack([s.observed for s in samples], axis=1))
    return feats, labels, observed


def data_loss(model, g: Graph, xi, sample: Sample, spec: LossSpec):
    """Supervised loss (plus any smoothness term) of f(xi); gradient w.r.t. xi."""
    if model.output_dim != 1:
        raise ValueError("node regression requires a scalar output layer")
    out, tape = nn.forward(model, g, xi)
    pred = out[:, 0]
    vals, grads = _prediction_grad_batch(
        g, pred[:, None], sample.labels[:, None], sample.observed[:, None], spec
    )
    _, grad_xi = nn.backward(model, g, tape, grads)
    return float(vals[0]), grad_xi


def psi(model, g: Graph, xi, sample: Sample, gamma: float, rho: float, spec: LossSpec):
    """Penalized objective data_loss(f(xi)) + gamma*(rho - cost(X, xi)).

    The gamma*rho constant is kept so reported values match the dual
    objective exactly.  Returns (value, grad_xi).
    """
    if gamma < 0 or rho < 0:
        raise ValueError("gamma and rho must be nonnegative")
    xi = as_signal(xi, g.n_nodes)
    loss_val, loss_grad = data_loss(model, g, xi, sample, spec)
    cost_val, cost_grad = transport_cost(sample.features, xi)
    value = loss_val + gamma * (rho - cost_val)
    return value, loss_grad - gamma * cost_grad


def psi_batch(model, g: Graph, xi_stack, centers, labels, observed, gamma, rho,
              spec: LossSpec, want_grad=False):
    """Vectorized psi over a (N, B, F) stack of candidate perturbations.

    ``centers`` holds the unperturbed features the cost is measured from;
    ``labels``/``observed`` are (N, B).  Returns (values, grads, costs)
    with grads None unless requested.
    """
    if model.output_dim != 1:
        raise ValueError("node regression requires a scalar output layer")
    out, tape = nn.forward_stack(model, g, xi_stack)
    preds = out[:, :, 0]
    vals, pred_grads = _prediction_grad_batch(g, preds, labels, observed, spec)
    costs, cost_grads = transport_cost_batch(centers, xi_stack)
    values = vals + gamma * (rho - costs)
    if not want_grad:
        return values, None, costs
    _, grad_xi = nn.backward_stack(model, g, tape, pred_grads[:, :, None])
    return values, grad_xi - gamma * cost_grads, costs
