import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cscmppi.core import (Control, ControlBounds, NoiseCovariance, RngStream, State,
                          as_control_sequence, sample_gaussian_noise, step_seed, wrap_angle)


@pytest.mark.parametrize("a, expected", [(0.0, 0.0), (3 * math.pi / 2, -math.pi / 2),
                                         (-math.pi, math.pi), (math.pi, math.pi)])
def test_wrap_angle_examples(a, expected):
    assert wrap_angle(a) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_wrap_angle_range_and_congruence(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    k = (a - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-6


def test_wrap_angle_rejects_nonfinite():
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))


def test_state_wraps_theta_and_rejects_nan():
    assert State(0, 0, 3 * math.pi).theta == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        State(float("inf"), 0, 0)


def test_control_bounds_order():
    with pytest.raises(ValueError):
        ControlBounds(Control(1.0, 0.0), Control(0.5, 1.0))
    b = ControlBounds(Control(0.0, -3.0), Control(0.5, 3.0))
    np.testing.assert_array_equal(b.clip(np.array([[0.7, -4.0]])), [[0.5, -3.0]])


def test_noise_moments():
    cov = NoiseCovariance(0.1, 1.0)
    draws = sample_gaussian_noise(RngStream(7, 0), cov, 100_000)
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * cov.std / math.sqrt(1e5))
    np.testing.assert_allclose(draws.std(axis=0), cov.std, rtol=0.02)


def test_noise_stream_is_deterministic():
    cov = NoiseCovariance(0.1, 1.0)
    a = sample_gaussian_noise(RngStream(3, 5), cov, 30)
    b = sample_gaussian_noise(RngStream(3, 5), cov, 30)
    assert a.tobytes() == b.tobytes()
    c = sample_gaussian_noise(RngStream(3, 6), cov, 30)
    assert not np.array_equal(a, c)


def test_vanishing_noise():
    draws = sample_gaussian_noise(RngStream(1, 0), NoiseCovariance(1e-9, 1e-9), 1000)
    assert np.all(np.abs(draws) < 1e-8)


def test_noise_covariance_must_be_positive():
    with pytest.raises(ValueError):
        NoiseCovariance(0.0, 1.0)


def test_control_sequence_validation():
    with pytest.raises(ValueError):
        as_control_sequence(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        as_control_sequence(np.zeros((3, 2)), horizon=4)
    with pytest.raises(ValueError):
        as_control_sequence([[0.0, float("nan")]])


def test_step_seed_distinct_and_stable():
    seeds = {step_seed(0, s) for s in range(1000)}
    assert len(seeds) == 1000
    assert step_seed(5, 3) == step_seed(5, 3)
