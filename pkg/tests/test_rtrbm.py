import math

import numpy as np
import pytest
from scipy.special import expit

from dybm.errors import DomainError
from dybm.rtrbm import (BpttTape, Rtrbm, RtrbmParams, all_patterns, bptt_backward, cd_negative_sample,
                        conditional_visible_logprob, forward, free_energy, hidden_mean_recursion,
                        recurrent_gradients, sequence_log_likelihood, train_epoch)
from dybm.series import BINARY, TimeSeries

from oracles import central_difference, relative_error, rtrbm_free_energy_enumerated


def random_params(rng, nv, nh, scale=0.8):
    return RtrbmParams(rng.normal(scale=scale, size=nv), rng.normal(scale=scale, size=nh),
                       rng.normal(scale=scale, size=nh), rng.normal(scale=scale, size=(nv, nh)),
                       rng.normal(scale=scale, size=(nh, nh)))


def binary_series(rng, T, n):
    return (rng.random((T, n)) < 0.5).astype(float)


def test_zero_params_give_half():
    r = hidden_mean_recursion(RtrbmParams.zeros(3, 2), binary_series(np.random.default_rng(0), 5, 3))
    np.testing.assert_array_equal(r, 0.5)


def test_single_unit_hand_value():
    p = RtrbmParams.zeros(1, 1)
    p.W[:] = 1.0
    assert hidden_mean_recursion(p, [[1.0]])[0, 0] == pytest.approx(0.7310585786, abs=1e-10)


def test_recursion_is_causal():
    rng = np.random.default_rng(1)
    p = random_params(rng, 3, 2)
    xs = binary_series(rng, 10, 3)
    np.testing.assert_array_equal(hidden_mean_recursion(p, xs)[:6], hidden_mean_recursion(p, xs[:6]))


def test_free_energy_zero_params():
    assert free_energy(RtrbmParams.zeros(2, 1), None, [1.0, 0.0]) == pytest.approx(-math.log(2), abs=1e-15)


@pytest.mark.parametrize("nh", [1, 2, 3, 4])
def test_free_energy_matches_enumeration(nh):
    rng = np.random.default_rng(nh)
    for _ in range(5):
        p = random_params(rng, 3, nh)
        x = (rng.random(3) < 0.5).astype(float)
        r_prev = rng.random(nh) if rng.random() < 0.7 else None
        expected = rtrbm_free_energy_enumerated(p.b_v, p.b_h, p.W, p.U, r_prev, p.b_init, x)
        assert free_energy(p, r_prev, x) == pytest.approx(expected, abs=1e-12)


def test_free_energy_linear_in_visible_bias():
    rng = np.random.default_rng(2)
    p = random_params(rng, 3, 2)
    x = np.array([1.0, 0.0, 1.0])
    shift = np.array([0.3, -1.0, 0.5])
    before = free_energy(p, None, x)
    p.b_v += shift
    assert free_energy(p, None, x) == pytest.approx(before - shift @ x, abs=1e-12)


def test_logprob_zero_params_uniform():
    assert conditional_visible_logprob(RtrbmParams.zeros(4, 2), None, np.ones(4)) == pytest.approx(-4 * math.log(2))


def test_logprob_normalises_and_matches_free_energy():
    rng = np.random.default_rng(3)
    p = random_params(rng, 4, 3)
    r_prev = rng.random(3)
    patterns = all_patterns(4)
    lps = [conditional_visible_logprob(p, r_prev, x) for x in patterns]
    assert math.fsum(math.exp(v) for v in lps) == pytest.approx(1.0, abs=1e-12)
    gap = lps[3] - lps[9]
    assert gap == pytest.approx(free_energy(p, r_prev, patterns[9]) - free_energy(p, r_prev, patterns[3]), abs=1e-12)


def test_enumeration_refuses_large_models():
    with pytest.raises(DomainError):
        all_patterns(21)


def test_cd_zero_params_uniform():
    rng = np.random.default_rng(4)
    p = RtrbmParams.zeros(3, 2)
    draws = np.array([cd_negative_sample(p, None, np.ones(3), 1, rng)[0] for _ in range(20_000)])
    assert np.all(np.abs(draws.mean(axis=0) - 0.5) < 0.02)


def test_cd_concentrates_on_mode():
    p = RtrbmParams.zeros(3, 2)
    p.b_v[:] = [4.0, -4.0, 4.0]
    rng = np.random.default_rng(5)
    draws = np.array([cd_negative_sample(p, None, np.zeros(3), 20, rng)[0] for _ in range(2000)])
    assert np.mean(np.all(draws == [1, 0, 1], axis=1)) > 0.9


def test_cd_reproducible_and_validated():
    p = random_params(np.random.default_rng(6), 3, 2)
    a = cd_negative_sample(p, None, np.ones(3), 3, np.random.default_rng(1))
    b = cd_negative_sample(p, None, np.ones(3), 3, np.random.default_rng(1))
    np.testing.assert_array_equal(a[0], b[0])
    with pytest.raises(DomainError):
        cd_negative_sample(p, None, np.ones(3), 0, np.random.default_rng(1))


def test_recurrent_gradient_zero_at_last_step():
    rng = np.random.default_rng(7)
    p = random_params(rng, 3, 2)
    tape = forward(p, binary_series(rng, 5, 3), "cd", 1, rng)
    g = recurrent_gradients(p, tape)
    assert not g[-1].any()


def test_recurrent_gradient_vanishes_without_recurrence():
    rng = np.random.default_rng(8)
    p = random_params(rng, 3, 2)
    p.U[:] = 0.0
    xs = binary_series(rng, 5, 3)
    tape = forward(p, xs, "exact")
    assert not recurrent_gradients(p, tape).any()
    grads = bptt_backward(p, tape)
    # per-step RBM gradient for W: data minus model correlations
    expected = sum(np.outer(xs[t], tape.r[t]) - tape.neg_xh[t] for t in range(5))
    np.testing.assert_allclose(grads["W"], expected, atol=1e-12)


def test_recurrent_gradient_matches_forward_mode_oracle():
    """Perturb ``r^{[s]}``, rerun the recursion forward and difference ``Q = sum_t r^{[t-1]} U h^{[t]}``."""
    rng = np.random.default_rng(9)
    p = random_params(rng, 3, 2)
    xs = binary_series(rng, 6, 3)
    tape = forward(p, xs, "exact")
    h_terms = rng.normal(size=(6, 2))
    g = recurrent_gradients(p, tape, h_terms)

    def q_with_offset(s, offset):
        r = tape.r.copy()
        r[s] = r[s] + offset
        for t in range(s + 1, 6):
            r[t] = expit(p.b_h + r[t - 1] @ p.U + xs[t] @ p.W)
        return sum(r[t - 1] @ p.U @ h_terms[t] for t in range(1, 6))

    for s in range(6):
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6
            fd = (q_with_offset(s, e) - q_with_offset(s, -e)) / 2e-6
            assert abs(fd - g[s, i]) < 1e-8


def test_tape_hidden_means_recomputable():
    rng = np.random.default_rng(10)
    p = random_params(rng, 3, 2)
    xs = binary_series(rng, 7, 3)
    tape = forward(p, xs, "cd", 1, rng)
    assert isinstance(tape, BpttTape)
    np.testing.assert_allclose(tape.r, hidden_mean_recursion(p, xs), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_exact_bptt_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, 3, 2)
    xs = binary_series(rng, 4, 3)
    grads = bptt_backward(p, forward(p, xs, "exact"))
    for name, block in p.blocks().items():
        for idx in np.ndindex(block.shape):
            fd = central_difference(lambda: sequence_log_likelihood(p, xs), block, idx)
            assert relative_error(fd, grads[name][idx], floor=1e-4) < 1e-4


def test_zero_rate_keeps_params_and_reports_metrics():
    rng = np.random.default_rng(11)
    p = random_params(rng, 2, 2)
    before = p.copy()
    metrics, times = train_epoch(p, binary_series(rng, 8, 2), 0.0, 1, rng)
    for name, block in p.blocks().items():
        np.testing.assert_array_equal(block, before.blocks()[name])
    assert np.isfinite(metrics.nll_per_step) and times.shape == (8,)


def test_exact_training_increases_log_likelihood():
    xs = np.tile([[1.0, 0.0], [0.0, 1.0]], (10, 1))
    p = RtrbmParams.initial(2, 2, np.random.default_rng(0))
    values = [sequence_log_likelihood(p, xs)]
    for _ in range(50):
        train_epoch(p, xs, 0.05, mode="exact")
        values.append(sequence_log_likelihood(p, xs))
    assert all(b > a for a, b in zip(values, values[1:]))


def test_model_interface():
    rng = np.random.default_rng(12)
    series = TimeSeries(binary_series(rng, 20, 3), BINARY)
    model = Rtrbm(random_params(rng, 3, 2, scale=0.1), rng=np.random.default_rng(0))
    model.fit_epoch(series)
    scores = model.score(series)
    assert scores.shape == (20,) and np.all(scores < 0)
    model.reset()
    np.testing.assert_allclose(model.forecast(1)[0], model.predict())
    samples = model.sample(5, np.random.default_rng(1))
    assert samples.shape == (5, 3) and set(np.unique(samples)) <= {0.0, 1.0}
    clone = Rtrbm.from_dict(model.to_dict())
    np.testing.assert_array_equal(clone.predict(), model.predict())
