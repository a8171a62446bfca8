import numpy as np
import pytest

from graphdro import (
    GnnModel,
    Graph,
    LayerSpec,
    LossSpec,
    Sample,
    from_edge_list,
    gnn_architecture,
    init_model,
    laplacian,
    laplacian_reg,
    psi,
    supervised_loss,
    transport_cost,
)
from graphdro.verify import away_from_kinks


def one_node_identity():
    """f(xi) = xi on one node: squared loss against label 0, center 1."""
    g = Graph(np.zeros((1, 1)))
    model = GnnModel((LayerSpec(1, 1, 1, "identity"),), [np.ones((1, 1, 1))])
    sample = Sample(np.array([[1.0]]), np.array([0.0]), np.array([True]))
    return g, model, sample


# ---------------------------------------------------------------------------
# supervised loss


def test_perfect_prediction_zero_loss():
    s = Sample(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]), np.array([True, False, True]))
    val, grad = supervised_loss(np.array([1.0, 99.0, 3.0]), s, LossSpec())
    assert val == 0.0
    assert np.array_equal(grad, np.zeros(3))


def test_squared_single_residual():
    s = Sample(np.ones((2, 1)), np.array([0.0, 0.0]), np.array([True, False]))
    val, grad = supervised_loss(np.array([2.0, 5.0]), s, LossSpec())
    assert val == 4.0
    assert np.array_equal(grad, [4.0, 0.0])


def test_huber_piecewise_values():
    spec = LossSpec(kind="huber", huber_delta=1.0)
    s = Sample(np.ones((1, 1)), np.array([0.0]), np.array([True]))
    val_small, grad_small = supervised_loss(np.array([0.5]), s, spec)
    assert val_small == 0.125
    assert grad_small[0] == 0.5
    val_big, grad_big = supervised_loss(np.array([2.0]), s, spec)
    assert val_big == 1.5
    assert grad_big[0] == 1.0


def test_huber_equals_half_squared_inside_delta():
    rng = np.random.default_rng(0)
    spec = LossSpec(kind="huber", huber_delta=2.0)
    labels = rng.standard_normal(5)
    pred = labels + rng.uniform(-2.0, 2.0, size=5)
    s = Sample(np.zeros((5, 1)), labels, np.ones(5, dtype=bool))
    hv, _ = supervised_loss(pred, s, spec)
    sv, _ = supervised_loss(pred, s, LossSpec())
    assert hv == sv / 2.0


def test_masking_ignores_unobserved():
    rng = np.random.default_rng(1)
    labels = rng.standard_normal(6)
    observed = np.array([True, False, True, False, False, True])
    s = Sample(np.zeros((6, 1)), labels, observed)
    pred = rng.standard_normal(6)
    base = supervised_loss(pred, s, LossSpec(kind="huber"))
    for _ in range(5):
        noisy = pred.copy()
        noisy[~observed] = rng.standard_normal((~observed).sum()) * 100
        val, grad = supervised_loss(noisy, s, LossSpec(kind="huber"))
        assert val == base[0]
        assert np.array_equal(grad, base[1])


def test_unobserved_labels_may_be_nan():
    labels = np.array([1.0, np.nan])
    s = Sample(np.zeros((2, 1)), labels, np.array([True, False]))
    val, grad = supervised_loss(np.array([2.0, 3.0]), s, LossSpec())
    assert val == 1.0
    assert np.array_equal(grad, [2.0, 0.0])


def test_all_unobserved_rejected():
    with pytest.raises(ValueError):
        Sample(np.zeros((2, 1)), np.zeros(2), np.array([False, False]))


# ---------------------------------------------------------------------------
# laplacian regularizer


def test_reg_constant_prediction_zero():
    g = from_edge_list(3, [(0, 1, 1.0), (1, 2, 2.0)])
    val, grad = laplacian_reg(g, np.full(3, 3.7))
    assert abs(val) <= 1e-12
    assert np.abs(grad).max() <= 1e-12


def test_reg_hand_example():
    g = from_edge_list(2, [(0, 1, 1.0)])
    val, _ = laplacian_reg(g, np.array([0.0, 1.0]))
    assert val == 2.0  # both ordered pairs contribute 1


def test_reg_matches_quadratic_form():
    rng = np.random.default_rng(2)
    upper = np.triu(rng.uniform(0.1, 1.0, size=(6, 6)), 1) * (rng.random((6, 6)) < 0.5)
    g = Graph(upper + upper.T)
    pred = rng.standard_normal(6)
    val, grad = laplacian_reg(g, pred)
    # independent oracle: the explicit double sum over ordered pairs
    acc = 0.0
    for i in range(6):
        for j in range(6):
            acc += g.weights[i, j] * (pred[i] - pred[j]) ** 2
    assert abs(val - acc) <= 1e-9
    assert np.allclose(grad, 4.0 * laplacian(g) @ pred, rtol=1e-12)


# ---------------------------------------------------------------------------
# transport cost


def test_cost_zero_at_center():
    x = np.ones((3, 2))
    val, grad = transport_cost(x, x.copy())
    assert val == 0.0
    assert np.array_equal(grad, np.zeros((3, 2)))


def test_cost_unit_offsets():
    x = np.zeros((2, 2))
    val, _ = transport_cost(x, np.ones((2, 2)))
    assert val == 4.0


def test_cost_matches_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 3))
    xi = rng.standard_normal((4, 3))
    val, grad = transport_cost(x, xi)
    acc = 0.0
    for i in range(4):
        for j in range(3):
            acc += (x[i, j] - xi[i, j]) ** 2
    assert abs(val - acc) <= 1e-12
    assert np.allclose(grad, 2.0 * (xi - x), rtol=1e-15)


def test_cost_shape_mismatch():
    with pytest.raises(ValueError):
        transport_cost(np.zeros((2, 2)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# psi


def test_psi_at_center_is_loss_plus_budget_term():
    rng = np.random.default_rng(4)
    g = from_edge_list(3, [(0, 1, 1.0), (1, 2, 1.0)])
    model = init_model(gnn_architecture(2, 2, 3, 2), seed=5)
    s = Sample(rng.standard_normal((3, 2)), rng.standard_normal(3), np.ones(3, dtype=bool))
    gamma, rho = 3.0, 0.7
    from graphdro.loss import data_loss

    base, _ = data_loss(model, g, s.features, s, LossSpec())
    val, _ = psi(model, g, s.features, s, gamma, rho, LossSpec())
    assert abs(val - (base + gamma * rho)) <= 1e-12


def test_psi_gamma_zero_is_pure_loss():
    rng = np.random.default_rng(5)
    g = from_edge_list(2, [(0, 1, 1.0)])
    model = init_model(gnn_architecture(1, 2, 2, 2), seed=6)
    s = Sample(rng.standard_normal((2, 1)), rng.standard_normal(2), np.ones(2, dtype=bool))
    xi = rng.standard_normal((2, 1))
    from graphdro.loss import data_loss

    base, _ = data_loss(model, g, xi, s, LossSpec())
    val, _ = psi(model, g, xi, s, 0.0, 5.0, LossSpec())
    assert val == base


def test_psi_closed_form_instance():
    # psi(xi) = xi^2 + 2*(0 - (xi-1)^2): value 2 at the maximizer xi = 2
    g, model, s = one_node_identity()
    val, grad = psi(model, g, np.array([[2.0]]), s, 2.0, 0.0, LossSpec())
    assert abs(val - 2.0) <= 1e-12
    assert abs(grad[0, 0]) <= 1e-12


def test_psi_decays_away_from_maximizer():
    g, model, s = one_node_identity()
    peak, _ = psi(model, g, np.array([[2.0]]), s, 2.0, 0.0, LossSpec())
    for offset in (-10.0, 10.0):
        val, _ = psi(model, g, np.array([[2.0 + offset]]), s, 2.0, 0.0, LossSpec())
        assert val < peak


def test_psi_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    spec = LossSpec()
    checked = 0
    while checked < 20:
        n = int(rng.integers(2, 5))
        upper = np.triu(rng.uniform(0.2, 1.0, size=(n, n)), 1) * (rng.random((n, n)) < 0.7)
        g = Graph(upper + upper.T)
        model = init_model(gnn_architecture(2, 2, 3, 2), seed=int(rng.integers(2**31)))
        feats = rng.standard_normal((n, 2))
        if not away_from_kinks(model, g, feats, 1e-3):
            continue
        s = Sample(feats, rng.standard_normal(n), rng.random(n) < 0.8)
        if not s.observed.any():
            continue
        gamma, rho = float(rng.uniform(0.5, 4.0)), float(rng.uniform(0.0, 1.0))
        _, grad = psi(model, g, feats, s, gamma, rho, spec)
        flat = feats.ravel()
        for i in range(flat.size):
            delta = np.zeros_like(flat)
            delta[i] = 1e-5
            up, _ = psi(model, g, (flat + delta).reshape(feats.shape), s, gamma, rho, spec)
            dn, _ = psi(model, g, (flat - delta).reshape(feats.shape), s, gamma, rho, spec)
            numeric = (up - dn) / 2e-5
            err = abs(grad.ravel()[i] - numeric)
            assert err <= max(1e-4 * max(abs(numeric), abs(grad.ravel()[i])), 1e-7)
        checked += 1


def test_psi_with_regularizer_gradient():
    rng = np.random.default_rng(8)
    g = from_edge_list(3, [(0, 1, 1.0), (1, 2, 1.0)])
    spec = LossSpec(kind="squared", lambda_reg=0.3)
    model = init_model(gnn_architecture(1, 2, 3, 2), seed=9)
    feats = rng.standard_normal((3, 1)) + 2.0
    assert away_from_kinks(model, g, feats, 1e-4)
    s = Sample(feats, rng.standard_normal(3), np.array([True, True, False]))
    _, grad = psi(model, g, feats, s, 1.5, 0.2, spec)
    flat = feats.ravel()
    for i in range(flat.size):
        delta = np.zeros_like(flat)
        delta[i] = 1e-5
        up, _ = psi(model, g, (flat + delta).reshape(feats.shape), s, 1.5, 0.2, spec)
        dn, _ = psi(model, g, (flat - delta).reshape(feats.shape), s, 1.5, 0.2, spec)
        numeric = (up - dn) / 2e-5
        assert abs(grad.ravel()[i] - numeric) <= max(1e-4 * abs(numeric), 1e-7)
