import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_batch
from fairfed.errors import ConfigurationError, UsageError
from fairfed.tensor import (
    Batch,
    ModelSpec,
    average_params,
    forward_logits,
    init_params,
    loss,
    loss_and_grad,
    sgd_step,
)
from oracles import central_diff, max_rel_err

LINEAR_2x2 = ModelSpec("linear", 2, 2)


def test_param_dims():
    assert ModelSpec("linear", 784, 62).dim == 785 * 62
    assert ModelSpec("mlp", 5, 3, hidden_dim=4).dim == 6 * 4 + 5 * 3


def test_zero_linear_params_give_zero_logits():
    spec = ModelSpec("linear", 3, 4)
    batch = random_batch(np.random.default_rng(0), spec, 5)
    assert np.array_equal(forward_logits(spec, np.zeros(spec.dim), batch), np.zeros((5, 4)))


def test_linear_logits_first_column_plus_bias():
    # W rows are classes: W = [[1, 2], [3, 4]], b = [0.5, -0.5]
    params = np.array([1.0, 2.0, 3.0, 4.0, 0.5, -0.5])
    out = forward_logits(LINEAR_2x2, params, Batch([[1.0, 0.0]], [0]))
    assert out.tolist() == [[1.5, 2.5]]


def test_mlp_logits_by_hand():
    spec = ModelSpec("mlp", 2, 2, hidden_dim=2)
    w1, b1 = [1.0, 0.0, 0.0, 1.0], [0.0, -1.0]
    w2, b2 = [1.0, 0.0, 0.0, 1.0], [0.5, 0.0]
    params = np.array(w1 + b1 + w2 + b2)
    # x = [2, 0.5] -> pre-activation [2, -0.5] -> relu [2, 0] -> logits [2.5, 0]
    out = forward_logits(spec, params, Batch([[2.0, 0.5]], [0]))
    assert out.tolist() == [[2.5, 0.0]]


@pytest.mark.parametrize("c", [2, 3, 10, 62])
def test_zero_params_loss_is_log_c(c):
    spec = ModelSpec("linear", 4, c)
    batch = random_batch(np.random.default_rng(c), spec, 7)
    value, _ = loss_and_grad(spec, np.zeros(spec.dim), batch)
    assert value == pytest.approx(math.log(c), rel=1e-15)


@pytest.mark.parametrize(
    "spec",
    [ModelSpec("linear", 4, 3), ModelSpec("linear", 9, 5), ModelSpec("mlp", 3, 3, hidden_dim=4)],
    ids=["linear-15", "linear-50", "mlp-31"],
)
@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(spec, seed):
    rng = np.random.default_rng(seed)
    params = rng.standard_normal(spec.dim)
    batch = random_batch(rng, spec, 8)
    _, grad = loss_and_grad(spec, params, batch)
    fd = central_diff(lambda p: loss(spec, p, batch), params, h=1e-5)
    assert max_rel_err(grad, fd) < 1e-4


def test_duplicated_batch_same_loss_and_grad():
    spec = ModelSpec("linear", 3, 3)
    rng = np.random.default_rng(1)
    params = rng.standard_normal(spec.dim)
    batch = random_batch(rng, spec, 6)
    doubled = Batch(np.repeat(batch.features, 2, axis=0), np.repeat(batch.labels, 2))
    l1, g1 = loss_and_grad(spec, params, batch)
    l2, g2 = loss_and_grad(spec, params, doubled)
    assert l1 == pytest.approx(l2, rel=1e-14)
    np.testing.assert_allclose(g1, g2, rtol=1e-13, atol=1e-16)


def test_large_logits_stay_finite():
    spec = ModelSpec("linear", 2, 3)
    params = np.full(spec.dim, 1e4)
    value, grad = loss_and_grad(spec, params, Batch([[1.0, -2.0], [3.0, 0.5]], [0, 2]))
    assert np.isfinite(value) and value >= 0
    assert np.all(np.isfinite(grad))


def test_deterministic():
    spec = ModelSpec("mlp", 4, 3, hidden_dim=5)
    rng = np.random.default_rng(3)
    params = init_params(spec, rng, scale=0.5)
    batch = random_batch(rng, spec, 10)
    a, b = loss_and_grad(spec, params, batch), loss_and_grad(spec, params, batch)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        forward_logits(LINEAR_2x2, np.zeros(5), Batch([[1.0, 0.0]], [0]))
    with pytest.raises(ConfigurationError):
        loss_and_grad(LINEAR_2x2, np.zeros(6), Batch([[1.0, 0.0, 1.0]], [0]))
    with pytest.raises(ConfigurationError):
        loss_and_grad(LINEAR_2x2, np.zeros(6), Batch([[1.0, 0.0]], [2]))
    with pytest.raises(ConfigurationError):
        sgd_step(np.zeros(2), np.zeros(3), 0.1, 1.0)


def test_sgd_step_examples():
    p = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(sgd_step(p, np.ones(3), 0.5, 0.0), p)
    assert np.array_equal(sgd_step(p, p, 1.0, 1.0), np.zeros(3))
    np.testing.assert_allclose(sgd_step(np.zeros(2), np.ones(2), 0.1, -1.0), [0.1, 0.1])


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    st.floats(0.001, 2.0),
    st.floats(-3.0, 3.0),
    st.floats(-3.0, 3.0),
)
def test_sgd_step_linear_in_lr_times_scale(grad, lr, a, b):
    p = np.array([1.0, -2.0, 0.5])
    g = np.array(grad)
    step = lambda s: p - sgd_step(p, g, lr, s)
    np.testing.assert_allclose(step(a) + step(b), step(a + b), atol=1e-10)


def test_average_params():
    v = np.array([1.5, -2.0])
    assert np.array_equal(average_params([v]), v)
    assert np.array_equal(average_params([v, -v]), np.zeros(2))
    assert average_params([np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 0.0])]).tolist() == [3.0, 2.0]
    with pytest.raises(UsageError):
        average_params([])
