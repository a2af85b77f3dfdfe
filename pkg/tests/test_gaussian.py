import math

import numpy as np
import pytest

from dybm.binary import RelaxedDybmParams
from dybm.errors import ConfigError, DomainError, NumericalError
from dybm.gaussian import (SIGMA_FLOOR, EchoStateNetwork, GaussianDybmParams, GaussianDyBM, esn_step,
                           gaussian_log_density, natural_step, predict_mean, sgd_step, step_log_density,
                           var_predict)
from dybm.series import REAL, TimeSeries, TrainConfig
from dybm.traces import TraceState

from oracles import central_difference, gaussian_logpdf_direct, relative_error, var_one_step

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def random_params(rng, n, d, L, readout_size=0):
    core = RelaxedDybmParams(rng.normal(size=n), rng.normal(scale=0.3, size=(d - 1, n, n)),
                             rng.normal(scale=0.3, size=(L, n, n)), rng.uniform(0.1, 0.9, size=L), d)
    readout = rng.normal(scale=0.3, size=(readout_size, n)) if readout_size else None
    return GaussianDybmParams(core, rng.uniform(0.5, 2.0, size=n), readout)


def warm(params, rng, steps=6, esn=None):
    state = TraceState(params.n_units, params.core.decay_rates, params.core.delay)
    for _ in range(steps):
        x = rng.normal(size=params.n_units)
        state.step(x)
        if esn is not None:
            esn.step(x)
    return state


def test_zero_weights_mean_is_bias():
    p = GaussianDybmParams(RelaxedDybmParams.zeros(2, 3, (0.5,)), np.ones(2))
    p.core.b[:] = [0.3, -1.0]
    state = warm(p, np.random.default_rng(0))
    np.testing.assert_array_equal(predict_mean(p, state), [0.3, -1.0])


def test_esn_idle_reservoir_contributes_nothing():
    esn = EchoStateNetwork(np.zeros((3, 3)), np.eye(3), leak=1.0)
    esn.step(np.zeros(3))
    assert not esn.psi.any()
    p = GaussianDybmParams(RelaxedDybmParams.zeros(3, 2, ()), np.ones(3), np.ones((3, 3)))
    state = TraceState(3, [], 2)
    assert not predict_mean(p, state, esn).any()


def test_log_density_hand_values():
    assert gaussian_log_density([0.0], np.zeros(1), np.ones(1)) == pytest.approx(-HALF_LOG_2PI, abs=1e-15)
    assert gaussian_log_density([1.0], np.zeros(1), np.ones(1)) == pytest.approx(-0.5 - HALF_LOG_2PI, abs=1e-15)
    drop = gaussian_log_density(np.zeros(3), np.zeros(3), np.ones(3)) \
        - gaussian_log_density(np.zeros(3), np.zeros(3), np.full(3, 2.0))
    assert drop == pytest.approx(3 * math.log(2), abs=1e-14)


def test_log_density_matches_direct_sum():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, m, s = rng.normal(size=4), rng.normal(size=4), rng.uniform(0.1, 3, size=4)
        assert gaussian_log_density(x, m, s) == pytest.approx(gaussian_logpdf_direct(x, m, s), abs=1e-12)


def test_sgd_zero_residual_only_sigma_moves():
    rng = np.random.default_rng(2)
    p = random_params(rng, 3, 3, 1)
    state = warm(p, rng)
    before = p.copy()
    sgd_step(p, state, predict_mean(p, state), 0.05)
    np.testing.assert_array_equal(p.core.W, before.core.W)
    np.testing.assert_array_equal(p.core.b, before.core.b)
    np.testing.assert_allclose(p.sigma, before.sigma - 0.05 / before.sigma, rtol=1e-14)


def test_sgd_zero_rate_is_noop():
    rng = np.random.default_rng(3)
    p = random_params(rng, 2, 2, 1)
    state = warm(p, rng)
    before = p.copy()
    sgd_step(p, state, rng.normal(size=2), 0.0)
    np.testing.assert_array_equal(p.core.U, before.core.U)
    np.testing.assert_array_equal(p.sigma, before.sigma)


def test_sgd_sigma_floor():
    p = GaussianDybmParams(RelaxedDybmParams.zeros(1, 2, ()), [1e-3])
    sgd_step(p, TraceState(1, [], 2), np.zeros(1), 1.0)
    assert p.sigma[0] == SIGMA_FLOOR


def test_sgd_rejects_non_finite_input():
    p = GaussianDybmParams(RelaxedDybmParams.zeros(1, 2, ()), [1.0])
    with pytest.raises(NumericalError):
        sgd_step(p, TraceState(1, [], 2), np.array([np.inf]), 0.1)


@pytest.mark.parametrize("seed", range(8))
def test_sgd_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n, d, L = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(0, 3))
    esn = EchoStateNetwork.random(3, n, seed=seed)
    p = random_params(rng, n, d, L, readout_size=3)
    state = warm(p, rng, esn=esn)
    x = rng.normal(size=n)
    updated = sgd_step(p.copy(), state, x, 1.0, esn)
    blocks = [(p.core.b, updated.core.b), (p.core.W, updated.core.W), (p.core.U, updated.core.U),
              (p.sigma, updated.sigma), (p.readout, updated.readout)]
    for block, new in blocks:
        for idx in np.ndindex(block.shape):
            fd = central_difference(lambda: step_log_density(p, state, x, esn), block, idx)
            assert relative_error(fd, new[idx] - block[idx], floor=1e-4) < 1e-5


def test_natural_hand_values():
    p = GaussianDybmParams(RelaxedDybmParams.zeros(1, 2, ()), [1.0])
    natural_step(p, TraceState(1, [], 2), np.ones(1), 0.1)
    assert p.core.b[0] == pytest.approx(0.1)
    q = GaussianDybmParams(RelaxedDybmParams.zeros(1, 2, ()), [2.0])
    natural_step(q, TraceState(1, [], 2), np.zeros(1), 0.25)
    assert q.sigma[0] ** 2 == pytest.approx(0.75 * 4.0, abs=1e-14)


def fisher_preconditioned(x, m, v):
    """``G^{-1} grad log N(x | m, v)`` with ``G = diag(1/v, 1/(2 v^2))``, solved numerically."""
    grad = np.array([(x - m) / v, ((x - m) ** 2 - v) / (2 * v * v)])
    fisher = np.diag([1.0 / v, 1.0 / (2 * v * v)])
    return np.linalg.solve(fisher, grad)


@pytest.mark.parametrize("seed", range(10))
def test_natural_equals_fisher_preconditioned_gradient(seed):
    rng = np.random.default_rng(seed)
    n = 3
    p = GaussianDybmParams(RelaxedDybmParams.zeros(n, 2, ()), rng.uniform(0.3, 2.0, size=n))
    p.core.b[:] = rng.normal(size=n)
    x, eta = rng.normal(size=n), 0.07
    m, v = p.core.b.copy(), p.sigma ** 2
    natural_step(p, TraceState(n, [], 2), x, eta)
    for j in range(n):
        direction = fisher_preconditioned(x[j], m[j], v[j])
        assert abs(p.core.b[j] - (m[j] + eta * direction[0])) < 1e-10
        assert abs(p.sigma[j] ** 2 - (v[j] + eta * direction[1])) < 1e-10
        assert abs(p.core.b[j] - (m[j] + eta * (x[j] - m[j]))) < 1e-12


def test_natural_weight_rule():
    rng = np.random.default_rng(4)
    p = random_params(rng, 2, 3, 1)
    state = warm(p, rng)
    r = (x := rng.normal(size=2)) - predict_mean(p, state)
    before = p.copy()
    natural_step(p, state, x, 0.1)
    np.testing.assert_allclose(p.core.W - before.core.W, 0.1 * state.fifo.lags()[:, :, None] * r, atol=1e-14)
    np.testing.assert_allclose(p.core.U - before.core.U, 0.1 * state.alpha[:, :, None] * r, atol=1e-14)


def test_var_equivalence_without_traces():
    rng = np.random.default_rng(5)
    n, d = 3, 4
    p = random_params(rng, n, d, 0)
    history = rng.normal(size=(30, n))
    state = TraceState(n, [], d)
    coefficients = [p.core.W[k].T for k in range(d - 1)]
    for t in range(history.shape[0]):
        expected = var_one_step(p.core.b, coefficients, history, t)
        np.testing.assert_allclose(predict_mean(p, state), expected, rtol=0, atol=1e-14)
        window = history[max(0, t - d + 1):t][::-1]
        np.testing.assert_allclose(var_predict(p.core.W, p.core.b, window), expected, atol=1e-14)
        state.step(history[t])


def test_esn_degenerate_leak_and_bounds():
    esn = EchoStateNetwork.random(5, 2, leak=0.0, seed=1)
    esn.psi = np.arange(5.0)
    np.testing.assert_array_equal(esn_step(esn, np.ones(2)), np.arange(5.0))
    full = EchoStateNetwork.random(5, 2, leak=1.0, seed=1)
    assert np.max(np.abs(full.step(100 * np.ones(2)))) <= 1.0
    assert full.spectral_radius() < 1.0


def test_esn_matrices_stay_fixed_during_learning():
    model = GaussianDyBM.from_config(2, TrainConfig(learning_rate=0.01), np.random.default_rng(0), esn=True)
    W_rec, W_in = model.esn.W_rec.copy(), model.esn.W_in.copy()
    model.fit_epoch(TimeSeries(np.random.default_rng(1).normal(size=(50, 2)), REAL))
    np.testing.assert_array_equal(model.esn.W_rec, W_rec)
    np.testing.assert_array_equal(model.esn.W_in, W_in)
    assert model.natural


def test_esn_rejects_bad_settings():
    with pytest.raises(ConfigError):
        EchoStateNetwork.random(3, 1, spectral_radius=1.0)
    with pytest.raises(DomainError):
        EchoStateNetwork(np.zeros((2, 3)), np.zeros((2, 1)), 0.5)


def test_forecast_zero_weights_repeats_bias():
    p = GaussianDybmParams(RelaxedDybmParams.zeros(2, 3, (0.5,)), np.ones(2))
    p.core.b[:] = [1.0, 2.0]
    out = GaussianDyBM(p).forecast(4)
    np.testing.assert_array_equal(out, np.tile([1.0, 2.0], (4, 1)))


def test_forecast_var1_iteration():
    rng = np.random.default_rng(6)
    p = random_params(rng, 2, 2, 0)
    model = GaussianDyBM(p)
    x0 = rng.normal(size=2)
    model.observe(x0)
    out = model.forecast(5)
    m = x0
    for h in range(5):
        m = p.core.b + p.core.W[0].T @ m
        np.testing.assert_allclose(out[h], m, atol=1e-13)
    np.testing.assert_array_equal(model.forecast(1)[0], model.predict())


def test_sigma_stays_off_floor_on_unit_variance_data():
    series = TimeSeries(np.random.default_rng(7).normal(size=(2000, 3)), REAL)
    for natural in (False, True):
        model = GaussianDyBM.from_config(3, TrainConfig(learning_rate=0.01), np.random.default_rng(0),
                                         natural=natural)
        model.fit_epoch(series)
        assert np.all(model.params.sigma > 0.5)
