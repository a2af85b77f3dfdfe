import numpy as np
import pytest

from dybm.binary import BinaryDyBM, RelaxedDybmParams, sgd_step_relaxed, step_log_likelihood
from dybm.errors import DomainError
from dybm.hidden import (HiddenDybmParams, HiddenDyBM, HiddenTraceState, PhiGradAccumulator,
                         exact_phi_gradient, hidden_drive, hidden_energy, lower_bound_estimate,
                         phi_step, phi_summand, sample_hidden, theta_step, visible_drive, visible_energy,
                         visible_log_likelihood)
from dybm.series import BINARY, TimeSeries

from oracles import (central_difference, hidden_dybm_exact_loglik, loglik_by_enumeration,
                     relative_error)


def random_params(rng, nv, nh, d, scale=0.7):
    core = RelaxedDybmParams(rng.normal(scale=scale, size=nv), rng.normal(scale=scale, size=(d - 1, nv, nv)),
                             rng.normal(scale=scale, size=(1, nv, nv)), [float(rng.uniform(0.2, 0.8))], d)
    p = HiddenDybmParams(core, nh)
    p.V = rng.normal(scale=scale, size=p.V.shape)
    p.phi = rng.normal(scale=scale, size=p.phi.shape)
    return p


def warm(params, rng, steps=6):
    state = HiddenTraceState(params)
    for _ in range(steps):
        state.step((rng.random(params.n_visible) < 0.5).astype(float),
                   (rng.random(params.n_hidden) < 0.5).astype(float))
    return state


def binary_series(rng, T, n):
    return (rng.random((T, n)) < 0.5).astype(float)


def test_zero_params_zero_energies():
    p = HiddenDybmParams.zeros(3, 2, 3)
    state = warm(p, np.random.default_rng(0))
    assert visible_energy(p, state, np.ones(3)) == 0.0
    assert hidden_energy(p, state, np.ones(2)) == 0.0


def test_block_views_share_storage():
    p = HiddenDybmParams.zeros(2, 3, 3)
    assert p.U.shape == (3, 2, 3) and p.Z.shape == (3, 3, 3)
    p.U[2, 1, 0] = 4.0
    assert p.phi[2 * 2 + 1, 0] == 4.0


@pytest.mark.parametrize("seed", range(6))
def test_energies_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    nv, nh = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    p = random_params(rng, nv, nh, int(rng.integers(1, 4)))
    state = warm(p, rng)
    x = (rng.random(nv) < 0.5).astype(float)
    h = (rng.random(nh) < 0.5).astype(float)
    assert visible_log_likelihood(p, state, x) == pytest.approx(
        loglik_by_enumeration(lambda v: visible_energy(p, state, v), x, nv), abs=1e-12)
    from dybm.binary import bernoulli_log_likelihood
    assert bernoulli_log_likelihood(hidden_drive(p, state), h) == pytest.approx(
        loglik_by_enumeration(lambda v: hidden_energy(p, state, v), h, nh), abs=1e-12)
    for j in range(nv):
        on, off = x.copy(), x.copy()
        on[j], off[j] = 1.0, 0.0
        log_odds = -(visible_energy(p, state, on) - visible_energy(p, state, off))
        assert log_odds == pytest.approx(visible_drive(p, state)[j], abs=1e-12)


def test_no_hidden_units_matches_visible_energy():
    rng = np.random.default_rng(1)
    p = random_params(rng, 3, 0, 3)
    state = warm(p, rng)
    from dybm.binary import energy
    x = np.array([1.0, 0.0, 1.0])
    assert visible_energy(p, state, x) == energy(p.core, state.visible, x)


def test_sample_hidden_cases():
    z = HiddenDybmParams.zeros(1, 3, 2)
    rng = np.random.default_rng(0)
    draws = np.array([sample_hidden(z, HiddenTraceState(z), rng)[0] for _ in range(20_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.5) < 0.02)
    neg = HiddenDybmParams.zeros(2, 2, 2)
    neg.phi[:] = -100.0
    state = HiddenTraceState(neg)
    state.step(np.ones(2), np.ones(2))
    assert not sample_hidden(neg, state, rng)[0].any()
    a = sample_hidden(z, HiddenTraceState(z), np.random.default_rng(5))[0]
    b = sample_hidden(z, HiddenTraceState(z), np.random.default_rng(5))[0]
    np.testing.assert_array_equal(a, b)


def test_theta_zero_at_conditional_mean():
    rng = np.random.default_rng(2)
    p = random_params(rng, 3, 2, 3)
    state = warm(p, rng)
    before = p.copy()
    from dybm.binary import firing_probability
    theta_step(p, state, firing_probability(visible_drive(p, state)), 0.4)
    np.testing.assert_allclose(p.V, before.V, atol=1e-15)
    np.testing.assert_allclose(p.core.W, before.core.W, atol=1e-15)


def test_theta_reduces_to_relaxed_rule():
    rng = np.random.default_rng(3)
    p = random_params(rng, 3, 0, 3)
    state = warm(p, rng)
    x = np.array([1.0, 0.0, 0.0])
    expected = sgd_step_relaxed(p.core.copy(), state.visible, x, 0.2)
    theta_step(p, state, x, 0.2)
    np.testing.assert_array_equal(p.core.W, expected.W)
    np.testing.assert_array_equal(p.core.U, expected.U)


@pytest.mark.parametrize("seed", range(6))
def test_theta_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    state = warm(p, rng)
    x = (rng.random(p.n_visible) < 0.5).astype(float)
    updated = theta_step(p.copy(), state, x, 1.0)
    pairs = [(p.core.b, updated.core.b), (p.core.W, updated.core.W), (p.core.U, updated.core.U),
             (p.V, updated.V)]
    for block, new in pairs:
        for idx in np.ndindex(block.shape):
            fd = central_difference(lambda: visible_log_likelihood(p, state, x), block, idx)
            assert relative_error(fd, new[idx] - block[idx], floor=1e-4) < 1e-5


def test_no_hidden_units_reduce_bit_exactly():
    rng = np.random.default_rng(4)
    series = TimeSeries(binary_series(rng, 80, 3), BINARY)
    core = RelaxedDybmParams.initial(3, 3, (0.5,), np.random.default_rng(0))
    visible = BinaryDyBM(core.copy(), learning_rate=0.2)
    hidden = HiddenDyBM(HiddenDybmParams(core.copy(), 0), learning_rate=0.2)
    m1, m2 = visible.fit_epoch(series), hidden.fit_epoch(series)
    assert m1.nll_per_step == m2.nll_per_step and m1.accuracy == m2.accuracy
    np.testing.assert_array_equal(visible.params.W, hidden.params.core.W)
    np.testing.assert_array_equal(visible.params.U, hidden.params.core.U)
    np.testing.assert_array_equal(visible.params.b, hidden.params.core.b)
    np.testing.assert_array_equal(visible.score(series), hidden.score(series))
    np.testing.assert_array_equal(visible.forecast(4), hidden.forecast(4))


def replay_accumulator(steps, discount, seed=0):
    """Run the model and rebuild ``G'`` from explicitly stored summands."""
    rng = np.random.default_rng(seed)
    params = random_params(rng, 2, 2, 3, scale=0.3)
    model = HiddenDyBM(params, learning_rate=0.01, discount=discount, rng=np.random.default_rng(seed + 1))
    summands = []
    for x in binary_series(rng, steps, 2):
        features = model.state.features()
        q = 1.0 / (1.0 + np.exp(-(features @ model.params.phi)))
        model.learn_one_step(x)
        h = model.state.hidden.fifo.lag(1)
        summands.append(np.outer(features, h - q))
    expected = sum(discount ** (steps - 1 - s) * g for s, g in enumerate(summands))
    return model.acc.G, expected, summands


def test_accumulator_equals_discounted_sum():
    G, expected, _ = replay_accumulator(200, 0.9)
    np.testing.assert_allclose(G, expected, rtol=0, atol=1e-10)


def test_accumulator_without_discount_keeps_last_summand():
    G, _, summands = replay_accumulator(20, 0.0)
    np.testing.assert_array_equal(G, summands[-1])


def test_phi_unchanged_when_sample_equals_mean():
    p = HiddenDybmParams.zeros(2, 2, 2)
    acc = PhiGradAccumulator(p.phi.shape[0], 2, 0.5)
    q = np.array([0.3, 0.6])
    acc.advance(phi_summand(np.ones(p.phi.shape[0]), q, q))
    phi_step(p, acc, -1.7, 0.1)
    assert not p.phi.any()


def test_phi_rule_scale():
    p = HiddenDybmParams.zeros(1, 1, 2)
    acc = PhiGradAccumulator(p.phi.shape[0], 1, 0.5)
    acc.G[:] = 2.0
    phi_step(p, acc, -3.0, 0.1)
    np.testing.assert_allclose(p.phi, 0.1 * 0.5 * -3.0 * 2.0)


def test_exact_phi_gradient_matches_summed_summands():
    rng = np.random.default_rng(6)
    p = random_params(rng, 2, 2, 2)
    F = rng.normal(size=(5, p.phi.shape[0]))
    H = (rng.random((5, 2)) < 0.5).astype(float)
    q = 1.0 / (1.0 + np.exp(-(F @ p.phi)))
    expected = sum(np.outer(F[s], H[s] - q[s]) for s in range(5))
    np.testing.assert_allclose(exact_phi_gradient(p, F, H), expected, atol=1e-12)
    assert not exact_phi_gradient(p, [], []).any()


def test_exact_phi_training_runs():
    rng = np.random.default_rng(7)
    model = HiddenDyBM(random_params(rng, 2, 2, 2, scale=0.1), learning_rate=0.01, exact_phi=True,
                       rng=np.random.default_rng(0))
    metrics = model.fit_epoch(TimeSeries(binary_series(rng, 30, 2), BINARY))
    assert np.isfinite(metrics.nll_per_step)
    assert len(model._features) == 30


def test_lower_bound_tight_without_hidden_units():
    rng = np.random.default_rng(8)
    p = random_params(rng, 2, 0, 2)
    xs = binary_series(rng, 6, 2)
    exact = 0.0
    state = HiddenTraceState(p)
    for x in xs:
        exact += step_log_likelihood(p.core, state.visible, x)
        state.step(x, np.zeros(0))
    mean, _ = lower_bound_estimate(p, xs, 3, rng)
    assert mean == pytest.approx(exact, abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_lower_bound_below_exact(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 2, 2, 2, scale=1.0)
    xs = binary_series(rng, 4, 2)
    exact = hidden_dybm_exact_loglik(p, xs)
    mean, se = lower_bound_estimate(p, xs, 2000, np.random.default_rng(100 + seed))
    assert mean <= exact + 3 * se


def test_exact_oracle_no_hidden_units():
    rng = np.random.default_rng(9)
    p = random_params(rng, 2, 0, 3)
    xs = binary_series(rng, 4, 2)
    assert hidden_dybm_exact_loglik(p, xs) == pytest.approx(lower_bound_estimate(p, xs, 1, rng)[0], abs=1e-12)


def test_lower_bound_variance_shrinks():
    rng = np.random.default_rng(10)
    p = random_params(rng, 2, 2, 2, scale=1.5)
    xs = binary_series(rng, 4, 2)
    _, se_small = lower_bound_estimate(p, xs, 200, np.random.default_rng(1))
    _, se_large = lower_bound_estimate(p, xs, 3200, np.random.default_rng(2))
    # 16x the samples should cut the standard error about 4x
    assert 3.0 < se_small / se_large < 5.3
    with pytest.raises(DomainError):
        lower_bound_estimate(p, xs, 0, rng)


def test_checkpoint_dict_roundtrip_continues_identically():
    rng = np.random.default_rng(11)
    series = TimeSeries(binary_series(rng, 40, 2), BINARY)
    a = HiddenDyBM(random_params(rng, 2, 2, 3, scale=0.1), rng=np.random.default_rng(3))
    a.fit_epoch(series)
    b = HiddenDyBM.from_dict(a.to_dict())
    for x in series.values[:10]:
        assert a.learn_one_step(x) == b.learn_one_step(x)
    np.testing.assert_array_equal(a.params.phi, b.params.phi)
