"""Training engines: worst-case-penalized min-max training and the plain
empirical-risk baseline.

The robust loop alternates two phases per mini-batch: (1) each sample's
features are pushed uphill on the penalized objective ``psi`` (monotone
backtracking ascent, vectorized over the batch); (2) the model weights
and the penalty multiplier are updated jointly by Adam using gradients
evaluated at the ascent endpoints, and the multiplier is projected back
above its floor.  Because the ascent problems are strongly concave once
the multiplier exceeds the loss curvature, the endpoint is unique and the
outer gradient is exact there.

Everything is deterministic for a given config + seed, including the
mini-batch shuffling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import KeyReader, parse_kv_file
from .errors import NumericalError
from .graph import Graph
from .loss import LossSpec, data_loss, psi_batch, stack_samples, transport_cost_batch

__all__ = [
    "RobustConfig",
    "AdamState",
    "TrainReport",
    "EpochStats",
    "BatchLog",
    "AscentResult",
    "adam_init",
    "adam_step",
    "ascend_batch",
    "inner_maximize",
    "dual_objective",
    "robust_train",
    "erm_train",
    "curvature_probe",
    "robust_config_from_file",
    "robust_config_from_mapping",
    "ROBUST_CONFIG_KEYS",
]

MAX_HALVINGS = 20
GAMMA_PROJECTION_MARGIN = 1e-6


@dataclass(frozen=True)
class RobustConfig:
    """Hyperparameters of the robust training loop."""

    rho: float = 10.0
    gamma_init: float = 5.0
    gamma_floor: float = 0.5
    ascent_steps: int = 15
    ascent_step_size: float = 0.05
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    loss_spec: LossSpec = field(default_factory=lambda: LossSpec(kind="huber"))
    seed: int = 0
    freeze_gamma: bool = False

    def validate(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.gamma_floor <= 0:
            raise ValueError("gamma_floor must be positive")
        if self.gamma_init <= self.gamma_floor:
            raise ValueError("gamma_init must exceed gamma_floor")
        if self.ascent_steps < 1:
            raise ValueError("ascent_steps must be >= 1")
        if self.ascent_step_size <= 0:
            raise ValueError("ascent_step_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


ROBUST_CONFIG_KEYS = (
    "rho",
    "gamma_init",
    "gamma_floor",
    "ascent_steps",
    "ascent_step_size",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "freeze_gamma",
    "loss",
    "huber_delta",
    "lambda_reg",
)


def robust_config_from_mapping(mapping, source="config"):
    """Build a RobustConfig from flat string keys; unknown keys are fatal."""
    base = RobustConfig()
    reader = KeyReader(mapping, source)
    spec = LossSpec(
        kind=reader.get_choice("loss", ("squared", "huber"), base.loss_spec.kind),
        huber_delta=reader.get_float("huber_delta", base.loss_spec.huber_delta),
        lambda_reg=reader.get_float("lambda_reg", base.loss_spec.lambda_reg),
    )
    cfg = RobustConfig(
        rho=reader.get_float("rho", base.rho),
        gamma_init=reader.get_float("gamma_init", base.gamma_init),
        gamma_floor=reader.get_float("gamma_floor", base.gamma_floor),
        ascent_steps=reader.get_int("ascent_steps", base.ascent_steps),
        ascent_step_size=reader.get_float("ascent_step_size", base.ascent_step_size),
        learning_rate=reader.get_float("learning_rate", base.learning_rate),
        batch_size=reader.get_int("batch_size", base.batch_size),
        epochs=reader.get_int("epochs", base.epochs),
        loss_spec=spec,
        seed=reader.get_int("seed", base.seed),
        freeze_gamma=reader.get_bool("freeze_gamma", base.freeze_gamma),
    )
    reader.finish()
    cfg.validate()
    return cfg


def robust_config_from_file(path):
    return robust_config_from_mapping(parse_kv_file(path), source=str(path))


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list
    v: list
    step: int = 0


def adam_init(params) -> AdamState:
    return AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; pure (returns new state and params)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    t = state.step + 1
    new_m, new_v, new_p = [], [], []
    for p, grad, m, v in zip(params, grads, state.m, state.v):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != p.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {p.shape}")
        m1 = beta1 * m + (1.0 - beta1) * grad
        v1 = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m1 / (1.0 - beta1**t)
        v_hat = v1 / (1.0 - beta2**t)
        new_m.append(m1)
        new_v.append(v1)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return AdamState(new_m, new_v, t), new_p


# ---------------------------------------------------------------------------
# Inner maximization


@dataclass
class AscentResult:
    """Outcome of a batched perturbation ascent."""

    xi: np.ndarray  # (N, B, F) perturbed features
    values: np.ndarray  # (B,) psi at the endpoints
    initial: np.ndarray  # (B,) psi at the starting points
    costs: np.ndarray  # (B,) transport cost of the endpoints
    traces: list  # per sample, the accepted psi values (nondecreasing)


def _psi_eval_stack(model, g, xi, centers, labels, observed, gamma, rho, spec):
    """psi values over a stack, keeping the tape so a gradient can follow."""
    from .loss import _prediction_grad_batch

    out, tape = nn.forward_stack(model, g, xi)
    vals, pred_grads = _prediction_grad_batch(g, out[:, :, 0], labels, observed, spec)
    costs, _ = transport_cost_batch(centers, xi)
    return vals + gamma * (rho - costs), costs, tape, pred_grads


def ascend_batch(model, g: Graph, features, labels, observed, gamma, rho,
                 spec: LossSpec, steps, step_size) -> AscentResult:
    """Monotone gradient ascent on psi for every column of a sample stack.

    Each sample carries its own step size: a proposed step is accepted
    only if its psi strictly increases, otherwise that sample's step size
    halves (at most MAX_HALVINGS times, after which the sample stops).
    Columns are independent, so this is the batch-parallel version of the
    per-sample search with identical accept/reject decisions.

    The forward tape of a fully-accepted candidate is reused for the next
    step's gradient, saving one forward pass per step on the common path.
    """
    if gamma <= 0:
        raise ValueError("ascent requires gamma > 0")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    features = np.ascontiguousarray(features, dtype=np.float64)
    n_batch = features.shape[1]
    xi = features.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        values, costs, tape, pred_grads = _psi_eval_stack(
            model, g, xi, features, labels, observed, gamma, rho, spec
        )
    if not np.isfinite(values).all():
        raise NumericalError("non-finite objective at the unperturbed features")
    initial = values.copy()
    traces = [[float(v)] for v in values]
    eta = np.full(n_batch, float(step_size))
    stopped = np.zeros(n_batch, dtype=bool)

    for _ in range(int(steps)):
        if stopped.all():
            break
        with np.errstate(over="ignore", invalid="ignore"):
            if tape is None:
                _, _, tape, pred_grads = _psi_eval_stack(
                    model, g, xi, features, labels, observed, gamma, rho, spec
                )
            _, grad_x = nn.backward_stack(model, g, tape, pred_grads[:, :, None])
            grads = grad_x - gamma * 2.0 * (xi - features)
        tape = None
        pending = ~stopped
        halvings = np.zeros(n_batch, dtype=np.int64)
        while pending.any():
            idx = np.flatnonzero(pending)
            full = idx.size == n_batch
            with np.errstate(over="ignore", invalid="ignore"):
                if full:
                    cand = xi + eta[None, :, None] * grads
                    cand_vals, cand_costs, cand_tape, cand_pgrads = _psi_eval_stack(
                        model, g, cand, features, labels, observed, gamma, rho, spec
                    )
                else:
                    cand = np.ascontiguousarray(
                        xi[:, idx, :] + eta[idx][None, :, None] * grads[:, idx, :]
                    )
                    cand_vals, _, cand_costs = psi_batch(
                        model, g, cand, np.ascontiguousarray(features[:, idx, :]),
                        labels[:, idx], observed[:, idx], gamma, rho, spec,
                    )
            if not np.isfinite(cand_vals).all():
                raise NumericalError(
                    "non-finite objective during perturbation ascent: the penalty "
                    "weight is likely below the loss curvature (increase gamma)"
                )
            better = cand_vals > values[idx]
            if full and bool(better.all()):
                xi = cand
                values = cand_vals
                costs = cand_costs
                for trace, v in zip(traces, cand_vals):
                    trace.append(float(v))
                tape = cand_tape
                pred_grads = cand_pgrads
                break
            accepted = idx[better]
            if accepted.size:
                xi[:, accepted, :] = cand[:, better, :]
                values[accepted] = cand_vals[better]
                costs[accepted] = cand_costs[better]
                for j, v in zip(accepted, cand_vals[better]):
                    traces[j].append(float(v))
                pending[accepted] = False
            rejected = idx[~better]
            if rejected.size:
                halvings[rejected] += 1
                done = rejected[halvings[rejected] > MAX_HALVINGS]
                stopped[done] = True
                pending[done] = False
                keep = rejected[halvings[rejected] <= MAX_HALVINGS]
                eta[keep] *= 0.5
    return AscentResult(xi=xi, values=values, initial=initial, costs=costs, traces=traces)


def inner_maximize(model, g: Graph, sample, gamma, rho, spec: LossSpec,
                   steps=15, step_size=0.05):
    """Worst-case perturbation search for a single sample.

    Returns (xi_star, value, trace); the trace of accepted psi values is
    nondecreasing by construction and value >= psi at the start.
    """
    feats, labels, observed = stack_samples([sample])
    res = ascend_batch(model, g, feats, labels, observed, gamma, rho, spec, steps, step_size)
    return res.xi[:, 0, :].copy(), float(res.values[0]), res.traces[0]


def dual_objective(model, g: Graph, batch, gamma, rho, spec: LossSpec,
                   steps=15, step_size=0.05) -> float:
    """Mean of psi at the per-sample ascent endpoints over a sample batch."""
    samples = list(batch)
    if not samples:
        raise ValueError("empty batch")
    feats, labels, observed = stack_samples(samples)
    res = ascend_batch(model, g, feats, labels, observed, gamma, rho, spec, steps, step_size)
    return float(res.values.mean())


# ---------------------------------------------------------------------------
# Training loops


@dataclass
class EpochStats:
    epoch: int
    objective: float
    gamma: float | None
    mean_inner_improvement: float | None
    mean_transport_cost: float | None
    wall_clock: float


@dataclass
class TrainReport:
    mode: str
    epochs: list = field(default_factory=list)
    final_gamma: float | None = None


@dataclass
class BatchLog:
    """Per-batch diagnostics passed to the optional training hook."""

    epoch: int
    batch_index: int
    objective: float
    gamma: float | None
    traces: list | None
    costs: np.ndarray | None


def _check_finite_params(params, where):
    for p in params:
        if not np.isfinite(p).all():
            raise NumericalError(f"parameters diverged {where}")


def _outer_gradients(model, g, xi, labels, observed, spec):
    """Danskin gradients: loss values at xi plus coefficient grads, batch-summed."""
    from .loss import _prediction_grad_batch

    out, tape = nn.forward_stack(model, g, xi)
    preds = out[:, :, 0]
    vals, pred_grads = _prediction_grad_batch(g, preds, labels, observed, spec)
    grad_hs, _ = nn.backward_stack(model, g, tape, pred_grads[:, :, None])
    return vals, grad_hs


def robust_train(dataset, g: Graph, model_init, cfg: RobustConfig, batch_hook=None):
    """Minimize the penalized worst-case objective over model + multiplier.

    Returns (model, gamma, report).  The multiplier is updated by the same
    Adam step as the coefficients (its gradient is rho minus the mean
    endpoint transport cost) and then projected strictly above the floor.
    Within a batch the per-sample ascents run vectorized; the parameter
    update happens once after all of them finish.
    """
    cfg.validate()
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    spec = cfg.loss_spec
    rng = np.random.default_rng(cfg.seed)
    model = model_init.copy()
    gamma = float(cfg.gamma_init)
    params = [h.copy() for h in model.coefficients]
    n_coeff = len(params)
    if not cfg.freeze_gamma:
        params.append(np.array([gamma]))
    state = adam_init(params)
    report = TrainReport(mode="robust")
    n_samples = len(samples)
    feats_all, labels_all, obs_all = stack_samples(samples)

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        perm = rng.permutation(n_samples)
        obj_sum = imp_sum = cost_sum = 0.0
        n_batches = 0
        for lo in range(0, n_samples, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            feats = np.ascontiguousarray(feats_all[:, idx, :])
            labels = np.ascontiguousarray(labels_all[:, idx])
            observed = np.ascontiguousarray(obs_all[:, idx])
            res = ascend_batch(
                model, g, feats, labels, observed, gamma, cfg.rho, spec,
                cfg.ascent_steps, cfg.ascent_step_size,
            )
            batch_obj = float(res.values.mean())
            if not np.isfinite(batch_obj):
                raise NumericalError(f"objective diverged at epoch {epoch}, batch {n_batches}")

            _, grad_hs = _outer_gradients(model, g, res.xi, labels, observed, spec)
            bsz = idx.size
            grads = [gh / bsz for gh in grad_hs]
            if not cfg.freeze_gamma:
                grads.append(np.array([cfg.rho - float(res.costs.mean())]))
            state, params = adam_step(state, params, grads, cfg.learning_rate)
            if not cfg.freeze_gamma:
                gamma = max(
                    float(params[n_coeff][0]),
                    cfg.gamma_floor * (1.0 + GAMMA_PROJECTION_MARGIN),
                )
                params[n_coeff] = np.array([gamma])
            _check_finite_params(params, f"at epoch {epoch}, batch {n_batches}")
            model.coefficients = list(params[:n_coeff])

            obj_sum += batch_obj
            imp_sum += float((res.values - res.initial).mean())
            cost_sum += float(res.costs.mean())
            n_batches += 1
            if batch_hook is not None:
                batch_hook(
                    BatchLog(
                        epoch=epoch,
                        batch_index=n_batches - 1,
                        objective=batch_obj,
                        gamma=gamma,
                        traces=res.traces,
                        costs=res.costs.copy(),
                    )
                )
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                objective=obj_sum / n_batches,
                gamma=gamma,
                mean_inner_improvement=imp_sum / n_batches,
                mean_transport_cost=cost_sum / n_batches,
                wall_clock=time.perf_counter() - tic,
            )
        )
    report.final_gamma = gamma
    return model, gamma, report


def erm_train(dataset, g: Graph, model_init, cfg: RobustConfig, batch_hook=None):
    """Plain mini-batch Adam on the mean supervised loss (no perturbations).

    Shares the shuffling, batching and determinism contract of
    :func:`robust_train`; returns (model, report).
    """
    cfg.validate()
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    spec = cfg.loss_spec
    rng = np.random.default_rng(cfg.seed)
    model = model_init.copy()
    params = [h.copy() for h in model.coefficients]
    state = adam_init(params)
    report = TrainReport(mode="erm")
    n_samples = len(samples)
    feats_all, labels_all, obs_all = stack_samples(samples)

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        perm = rng.permutation(n_samples)
        obj_sum = 0.0
        n_batches = 0
        for lo in range(0, n_samples, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            feats = np.ascontiguousarray(feats_all[:, idx, :])
            labels = np.ascontiguousarray(labels_all[:, idx])
            observed = np.ascontiguousarray(obs_all[:, idx])
            vals, grad_hs = _outer_gradients(model, g, feats, labels, observed, spec)
            batch_obj = float(vals.mean())
            if not np.isfinite(batch_obj):
                raise NumericalError(f"objective diverged at epoch {epoch}, batch {n_batches}")
            grads = [gh / idx.size for gh in grad_hs]
            state, params = adam_step(state, params, grads, cfg.learning_rate)
            _check_finite_params(params, f"at epoch {epoch}, batch {n_batches}")
            model.coefficients = list(params)
            obj_sum += batch_obj
            n_batches += 1
            if batch_hook is not None:
                batch_hook(
                    BatchLog(
                        epoch=epoch,
                        batch_index=n_batches - 1,
                        objective=batch_obj,
                        gamma=None,
                        traces=None,
                        costs=None,
                    )
                )
        report.epochs.append(
            EpochStats(
                epoch=epoch,
                objective=obj_sum / n_batches,
                gamma=None,
                mean_inner_improvement=None,
                mean_transport_cost=None,
                wall_clock=time.perf_counter() - tic,
            )
        )
    return model, report


def curvature_probe(model, g: Graph, samples, spec: LossSpec, probes=5, seed=0) -> float:
    """Estimate the gradient-Lipschitz constant of the feature-to-loss map.

    Probes random unit directions around each sample's features with a
    fixed displacement h = 1e-3 and takes the steepest observed gradient
    change.  A penalty weight above this estimate makes the perturbation
    objective strongly concave (the quadratic cost contributes curvature
    2*gamma, beating the loss Hessian with margin).
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    h = 1e-3
    rng = np.random.default_rng(seed)
    estimate = 0.0
    for sample in samples:
        _, base_grad = data_loss(model, g, sample.features, sample, spec)
        for _ in range(int(probes)):
            direction = rng.standard_normal(sample.features.shape)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                continue
            direction /= norm
            _, moved_grad = data_loss(model, g, sample.features + h * direction, sample, spec)
            estimate = max(estimate, float(np.linalg.norm(moved_grad - base_grad)) / h)
    return estimate
