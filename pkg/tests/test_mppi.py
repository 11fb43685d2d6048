import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cscmppi.core import Control, ControlBounds, NoiseCovariance, State
from cscmppi.costs import ConstraintSet, CostConfig
from cscmppi.dynamics import DiffDriveModel
from cscmppi.mppi import (MppiParams, effective_sample_size, generate_batch, shift_sequence,
                          softmax_weights, standard_mppi_step, weighted_update)

MODEL = DiffDriveModel(0.03)
BOUNDS = ControlBounds(Control(0.0, -3.0), Control(0.5, 3.0))


def test_batch_shapes_and_perturbation_identity():
    p = MppiParams(K=300, N=30)
    nominal = np.tile([0.2, 0.1], (30, 1))
    b = generate_batch(nominal, p, MODEL, np.zeros(3), seed=4)
    assert b.perturbed.shape == (300, 30, 2)
    assert b.rollouts.shape == (300, 31, 3)
    np.testing.assert_array_equal(b.perturbations, b.perturbed - nominal)
    np.testing.assert_array_equal(b.rollouts, MODEL.rollout_array(np.zeros(3), b.perturbed))


def test_batch_deterministic_per_seed():
    p = MppiParams(K=20, N=10)
    a = generate_batch(np.zeros((10, 2)), p, MODEL, np.zeros(3), 11)
    b = generate_batch(np.zeros((10, 2)), p, MODEL, np.zeros(3), 11)
    assert a.perturbed.tobytes() == b.perturbed.tobytes()
    # sample k does not depend on K
    c = generate_batch(np.zeros((10, 2)), MppiParams(K=5, N=10), MODEL, np.zeros(3), 11)
    np.testing.assert_array_equal(c.perturbed, a.perturbed[:5])


def test_tiny_noise_batch_matches_nominal():
    p = MppiParams(K=8, N=10, cov=NoiseCovariance(1e-9, 1e-9))
    nominal = np.tile([0.3, 0.2], (10, 1))
    b = generate_batch(nominal, p, MODEL, np.zeros(3), 0)
    ref = MODEL.rollout_array(np.zeros(3), nominal)
    assert np.max(np.abs(b.rollouts - ref)) < 1e-8


def test_clamp_samples_option():
    p = MppiParams(K=50, N=10, clamp_samples=True)
    b = generate_batch(np.zeros((10, 2)), p, MODEL, np.zeros(3), 0)
    assert b.perturbed[..., 0].min() >= 0.0 and b.perturbed[..., 0].max() <= 0.5
    np.testing.assert_array_equal(b.perturbations, b.perturbed)


def test_softmax_examples():
    np.testing.assert_array_equal(softmax_weights([3.0], 0.5), [1.0])
    np.testing.assert_allclose(softmax_weights([2.0] * 4, 0.1), [0.25] * 4)
    lam = 0.7
    e = math.exp(-1)
    np.testing.assert_allclose(softmax_weights([0.0, lam], lam), [1 / (1 + e), e / (1 + e)], rtol=1e-12)


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        softmax_weights([1.0, float("nan")], 1.0)
    with pytest.raises(ValueError):
        softmax_weights([], 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.floats(1e-3, 10.0))
def test_softmax_shift_invariance(costs, lam):
    w1 = softmax_weights(costs, lam)
    w2 = softmax_weights(np.asarray(costs) + 123.0, lam)
    np.testing.assert_allclose(w1, w2, atol=1e-9)
    assert abs(w1.sum() - 1) < 1e-12


def test_weighted_update_examples():
    nominal = np.ones((3, 2))
    a = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(weighted_update(nominal, np.zeros((4, 3, 2)), np.full(4, 0.25)), nominal)
    np.testing.assert_array_equal(weighted_update(nominal, a[None], [1.0]), nominal + a)
    np.testing.assert_allclose(weighted_update(nominal, np.stack([a, -a]), [0.5, 0.5]), nominal)


def test_shift_sequence_examples():
    np.testing.assert_array_equal(shift_sequence([[1, 1], [1, 1]]), [[1, 1], [1, 1]])
    np.testing.assert_array_equal(shift_sequence([[1, 0], [2, 0], [3, 0]]), [[2, 0], [3, 0], [3, 0]])
    np.testing.assert_array_equal(shift_sequence([[1, 2]]), [[1, 2]])


def test_ess_bounds():
    assert effective_sample_size(np.full(10, 0.1)) == pytest.approx(10)
    assert effective_sample_size([1.0, 0.0]) == 1.0


def test_standard_step_at_goal_stays_put():
    p = MppiParams(K=50, N=10, cov=NoiseCovariance(1e-6, 1e-6))
    cfg = CostConfig(State(0, 0, 0))
    u, diag = standard_mppi_step(np.zeros(3), np.zeros((10, 2)), p, MODEL, cfg,
                                 ConstraintSet((), BOUNDS), seed=0)
    assert np.all(np.abs(u[0]) < 1e-5)
    assert diag.selected_feasible


def test_standard_step_moves_toward_goal():
    p = MppiParams(K=300, N=30, lam=0.01)
    cfg = CostConfig(State(1, 0, 0), control_scale=0.01)
    cs = ConstraintSet((), BOUNDS)
    nominal = np.zeros((30, 2))
    for step in range(5):
        nominal, diag = standard_mppi_step(np.zeros(3), nominal, p, MODEL, cfg, cs, seed=step)
    assert nominal[:, 0].mean() > 0.1
    assert MODEL.rollout_array(np.zeros(3), nominal)[-1, 0] > 0.05


def test_params_validation():
    with pytest.raises(ValueError):
        MppiParams(K=0)
    with pytest.raises(ValueError):
        MppiParams(lam=0.0)
