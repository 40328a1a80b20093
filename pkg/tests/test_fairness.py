import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_batch
from fairfed import fairness as fx
from fairfed.errors import ConfigurationError, DegenerateStateError
from fairfed.tensor import ModelSpec, loss, loss_and_grad
from oracles import central_diff, max_rel_err, pairwise_penalty_loops, pairwise_weights

gap_vectors = st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=12)
lams = st.floats(0, 10)


def test_eagle_weights_examples():
    assert fx.eagle_weights([0.3, -1.0, 2.0], 0.0).weights.tolist() == [1.0, 1.0, 1.0]
    assert fx.eagle_weights([0.7] * 4, 3.0).weights.tolist() == [1.0] * 4
    assert fx.eagle_weights([1.0, 0.0], 0.5).weights.tolist() == [3.0, -1.0]
    with pytest.raises(ConfigurationError):
        fx.eagle_weights([1.0], 1.0)


@settings(max_examples=200, deadline=None)
@given(gap_vectors, lams)
def test_weight_formulas_agree_and_mean_one(gaps, lam):
    w = fx.eagle_weights(gaps, lam).weights
    np.testing.assert_allclose(w, pairwise_weights(gaps, lam), rtol=0, atol=1e-9)
    assert abs(w.mean() - 1.0) < 1e-9


def test_normalize_examples():
    w = fx.WeightVector(np.ones(5), 1.0)
    assert np.allclose(fx.normalize_weights(w, "l2sqrtk").weights, 1.0, rtol=0, atol=1e-15)
    out = fx.normalize_weights(fx.WeightVector(np.array([3.0, -1.0]), 1.0), "l2unit").weights
    np.testing.assert_allclose(out, [3 / math.sqrt(10), -1 / math.sqrt(10)], rtol=1e-15)
    same = fx.WeightVector(np.array([2.0, -3.0]), 1.0)
    assert fx.normalize_weights(same, "none").weights is same.weights
    with pytest.raises(DegenerateStateError):
        fx.normalize_weights(fx.WeightVector(np.zeros(3), 1.0), "l2unit")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-6), min_size=2, max_size=10), st.sampled_from(list(fx.Normalization)))
def test_normalize_preserves_signs_and_ratios(raw, mode):
    w = np.array(raw)
    out = fx.normalize_weights(fx.WeightVector(w, 1.0), mode).weights
    assert np.array_equal(np.sign(out), np.sign(w))
    np.testing.assert_allclose(out / out[0], w / w[0], rtol=1e-12)
    if mode is fx.Normalization.L2_UNIT:
        assert np.linalg.norm(out) == pytest.approx(1.0)


def test_penalty_and_variance_examples():
    assert fx.pairwise_penalty([0.4, 0.4, 0.4], 2.0) == 0.0
    assert fx.pairwise_penalty([1.0, 0.0], 1.0) == pytest.approx(1.0)
    assert fx.gap_variance([3.0, 3.0, 3.0]) == 0.0
    assert fx.gap_variance([0.0, 2.0]) == pytest.approx(2.0)


@settings(max_examples=200, deadline=None)
@given(gap_vectors, lams, st.floats(-100, 100))
def test_penalty_identities(gaps, lam, shift):
    p = fx.pairwise_penalty(gaps, lam)
    assert p == pytest.approx(pairwise_penalty_loops(gaps, lam), rel=1e-9, abs=1e-12)
    assert p == pytest.approx(2 * lam * fx.gap_variance(gaps), rel=1e-10, abs=1e-12)
    # shift invariance: moving every L*_k by c moves every gap by -c
    shifted = [g - shift for g in gaps]
    assert fx.gap_variance(shifted) == pytest.approx(fx.gap_variance(gaps), rel=1e-7, abs=1e-9)
    np.testing.assert_allclose(
        fx.eagle_weights(shifted, lam).weights, fx.eagle_weights(gaps, lam).weights, atol=1e-8
    )


def test_objective_examples():
    assert fx.objective([1.0, 2.0, 3.0], [5.0, 0.0, 1.0], 0.0) == 2.0
    assert fx.objective([1.0, 2.0], [0.5, 0.5], 7.0) == 1.5
    assert fx.objective([1.0, 2.0], [1.0, 0.0], 1.0) == pytest.approx(2.5)


def test_objective_grad_reduces_to_mean():
    grads = [np.array([1.0, 2.0]), np.array([3.0, -2.0]), np.array([2.0, 3.0])]
    mean = np.mean(grads, axis=0)
    np.testing.assert_allclose(fx.objective_grad(grads, [0.1, 0.5, 0.9], 0.0), mean)
    np.testing.assert_allclose(fx.objective_grad(grads, [0.2, 0.2, 0.2], 4.0), mean)


def federated_objective(spec, batches, optimal, lam):
    """F(theta) and its analytic gradient for a set of client batches."""

    def value(theta):
        losses = np.array([loss(spec, theta, b) for b in batches])
        return fx.objective(losses, losses - optimal, lam)

    def grad(theta):
        pairs = [loss_and_grad(spec, theta, b) for b in batches]
        losses = np.array([p[0] for p in pairs])
        return fx.objective_grad([p[1] for p in pairs], losses - optimal, lam)

    return value, grad


@pytest.mark.parametrize("seed", range(6))
def test_objective_grad_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec("linear", 4, 3)
    batches = [random_batch(rng, spec, 6) for _ in range(3)]
    value, grad = federated_objective(spec, batches, rng.uniform(0, 1, 3), lam=float(rng.uniform(0.1, 3)))
    theta = rng.standard_normal(spec.dim)
    assert max_rel_err(grad(theta), central_diff(value, theta)) < 1e-4


def test_gamma_updates():
    est = fx.gamma_update(fx.GammaEstimate(), [0.2, 0.2, 0.2])
    assert est == fx.GammaEstimate(0.0, 1)
    est = fx.gamma_update(fx.gamma_update(fx.GammaEstimate(), [1.0, -1.0]), [0.5, 0.0])
    assert est.value == 2.0 and est.num_observations == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(gap_vectors.filter(lambda g: len(g) == 4), min_size=1, max_size=10))
def test_gamma_monotone(seq):
    est, prev = fx.GammaEstimate(), 0.0
    for gaps in seq:
        est = fx.gamma_update(est, gaps)
        assert est.value >= prev
        prev = est.value
    assert est.num_observations == len(seq)


@settings(max_examples=100, deadline=None)
@given(gap_vectors, lams)
def test_weight_bound_from_gamma(gaps, lam):
    gamma = fx.gamma_update(fx.GammaEstimate(), gaps).value
    assert np.max(np.abs(fx.eagle_weights(gaps, lam).weights)) <= 1 + 4 * lam * gamma + 1e-9
