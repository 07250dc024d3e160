import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagination.policy_grad import (
    ActionNormBias,
    ConstantBias,
    DifferentiablePolicy,
    FidelityCurve,
    LinearReward,
    argmin_phi,
    bias_mse_decomposition,
    bonferroni_threshold,
    fidelity_table,
    make_pg_env,
    noise_cap,
    phi,
    reference_gradient,
    reinforce_estimate,
    reward_to_go,
    scalar_variance,
    simulate_terms,
    single_step_inflation,
    unbiasedness_grid,
    variance_halving_check,
    variance_inflation_check,
)
from imagination.rng import make_rng


@given(st.integers(0, 10_000))
def test_score_matches_finite_difference(seed):
    rng = make_rng("score-fd", seed)
    pol = DifferentiablePolicy(rng.normal(size=(2, 3)), float(rng.uniform(0.3, 2.0)))
    s, a = rng.normal(size=3), rng.normal(size=2)
    h = 1e-6
    fd = np.empty(pol.n_params)
    for i in range(pol.n_params):
        e = np.zeros(pol.n_params)
        e[i] = h
        up = pol.log_prob(s, a, pol.theta + e.reshape(2, 3))
        dn = pol.log_prob(s, a, pol.theta - e.reshape(2, 3))
        fd[i] = (up - dn) / (2 * h)
    sc = pol.score(s, a)
    assert np.linalg.norm(sc - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8) + 1e-9


def test_policy_validation():
    with pytest.raises(ValueError):
        DifferentiablePolicy(np.zeros((2, 3)), 0.0)
    with pytest.raises(ValueError):
        DifferentiablePolicy(np.zeros(3), 1.0)


def test_reward_to_go():
    r = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(reward_to_go(r, 0.5), [[1 + 1 + 0.75, 2 + 1.5, 3.0]])


def test_zero_rewards_give_zero_estimate():
    env, pol = make_pg_env()
    zero = LinearReward(np.zeros(3), np.zeros(2))
    t = simulate_terms(env, pol, 50, 5, 0.9, make_rng("zero"), reward=zero)
    assert np.all(t.noisy(0.0) == 0.0)


def test_bandit_matches_analytic_gradient():
    env, pol = make_pg_env(1)
    w_s, w_a = np.array([0.3, -0.2, 0.5]), np.array([1.0, -0.7])
    t = simulate_terms(env, pol, 10_000, 1, 0.9, make_rng("bandit"), reward=LinearReward(w_s, w_a))
    exact = np.outer(w_a, env.s0_center).ravel()
    se = t.clean.std(axis=0, ddof=1) / math.sqrt(len(t.clean))
    assert np.all(np.abs(t.clean.mean(axis=0) - exact) <= 3 * se)


def test_constant_bias_leaves_mean_unchanged():
    env, pol = make_pg_env()
    clean = simulate_terms(env, pol, 20_000, 5, 0.9, make_rng("cb", 0)).clean
    biased = simulate_terms(env, pol, 20_000, 5, 0.9, make_rng("cb", 1), bias=ConstantBias(0.5)).clean
    se = np.sqrt(clean.var(axis=0, ddof=1) / len(clean) + biased.var(axis=0, ddof=1) / len(biased))
    assert np.all(np.abs(clean.mean(axis=0) - biased.mean(axis=0)) <= bonferroni_threshold(pol.n_params) * se)


def test_reinforce_estimate_fields_and_determinism():
    env, pol = make_pg_env()
    a = reinforce_estimate(env, pol, 8, 5, 0.9, noise_sigma2=1.0, seed=3)
    b = reinforce_estimate(env, pol, 8, 5, 0.9, noise_sigma2=1.0, seed=3)
    assert np.array_equal(a.mean, b.mean) and a.scalar_var == b.scalar_var
    assert a.scalar_var >= 0 and a.mean.shape == (pol.n_params,)
    with pytest.raises(ValueError):
        reinforce_estimate(env, pol, 0, 5, 0.9)
    with pytest.raises(ValueError):
        reinforce_estimate(env, pol, 1, 5, 0.9, noise_sigma2=-1.0)


def test_noisy_estimates_unbiased():
    env, pol = make_pg_env()
    reports = unbiasedness_grid(env, pol, sigma2_grid=(0.1, 4.0), K_grid=(1, 4), H=5, reps=4000)
    assert len(reports) == 4 and all(r.holds for r in reports)
    assert bonferroni_threshold(1) == 3.0
    assert bonferroni_threshold(10_000) > 4.0


def test_zero_noise_has_zero_inflation():
    env, pol = make_pg_env()
    rep = variance_inflation_check(env, pol, 4, 5, 0.9, 0.0, reps=300, resamples=200)
    assert rep.inflation == 0.0 and rep.ci_lo == 0.0 == rep.ci_hi and rep.holds


def test_single_step_inflation_exact():
    env, pol = make_pg_env()
    K, s2 = 4, 2.0
    rep = variance_inflation_check(env, pol, K, 1, 0.9, s2, reps=5000, resamples=300)
    exact = single_step_inflation(pol, env, s2, K)
    assert rep.ci_lo <= exact <= rep.ci_hi
    assert exact <= rep.cap * (1 - 0.9) ** 2 * 1.2
    assert rep.holds


@pytest.mark.parametrize("H,gamma", [(1, 0.5), (10, 0.9)])
def test_inflation_within_cap(H, gamma):
    env, pol = make_pg_env()
    rep = variance_inflation_check(env, pol, 8, H, gamma, 1.0, reps=1000, resamples=300)
    assert rep.holds and rep.inflation > 0


def test_noise_cap_halves_with_K():
    assert noise_cap(1.0, 10, 3.0, 8, 0.9) == pytest.approx(2 * noise_cap(1.0, 10, 3.0, 16, 0.9))


def test_variance_halves_when_K_doubles():
    env, pol = make_pg_env()
    rep = variance_halving_check(env, pol, 4, 5, 0.9, 1.0, reps=2000, resamples=300)
    assert rep.holds


def test_scalar_variance():
    assert scalar_variance(np.ones((1, 3))) == 0.0
    x = np.array([[0.0, 0.0], [2.0, 4.0]])
    assert scalar_variance(x) == pytest.approx(2.0 + 8.0)


@pytest.fixture(scope="module")
def bias_setup():
    env, pol = make_pg_env()
    return env, pol, reference_gradient(env, pol, 5, 0.9, n=100_000)


@pytest.mark.parametrize("bias", [None, ConstantBias(0.7)])
def test_unbiased_rewards_mse_is_variance(bias_setup, bias):
    env, pol, ref = bias_setup
    rep = bias_mse_decomposition(env, pol, 8, 5, 0.9, bias, reps=1000, reference=ref, bias_rollouts=20_000)
    assert rep.holds
    assert abs(rep.excess) <= 1.96 * rep.excess_se + 1.96 * rep.bias_grad_sq_se


def test_action_bias_excess_persists(bias_setup):
    env, pol, ref = bias_setup
    reps = [bias_mse_decomposition(env, pol, K, 5, 0.9, ActionNormBias(), reps=1000, reference=ref, bias_rollouts=40_000)
            for K in (8, 32)]
    for r in reps:
        assert r.holds and r.bias_grad_sq > 3 * r.bias_grad_sq_se
    a, b = reps
    assert abs(a.excess - b.excess) <= 1.96 * math.hypot(a.excess_se, b.excess_se)


def test_fidelity_regimes():
    flat = FidelityCurve("power_law", {"a": 2.0, "p": 1.0})
    res = argmin_phi(flat, (0.1, 10.0), grid=101)
    assert res.all_tie and res.phi_star == 2.0
    steep = FidelityCurve("power_law", {"a": 1.0, "p": 2.0})
    assert argmin_phi(steep, (0.1, 10.0)).c_star == 10.0
    shallow = FidelityCurve("power_law", {"a": 1.0, "p": 0.5})
    assert argmin_phi(shallow, (0.1, 10.0)).c_star == 0.1

    bounded = FidelityCurve("bounded", {"sigma0_sq": 1.0, "c_max": 2.0})
    res = argmin_phi(bounded, (0.0, 2.0), grid=201)
    assert set(res.ties) == {0.0, 2.0} and res.phi_star == 0.0
    lin = np.linspace(0.0, 2.0, 201)
    vals = [r["phi"] for r in fidelity_table(bounded, lin)]
    assert lin[int(np.argmax(vals))] == pytest.approx(1.0)
    assert phi(bounded, 1.0) == pytest.approx(0.5)

    floor = FidelityCurve("floor", {"sigma_floor_sq": 0.25, "a": 1.0})
    res = argmin_phi(floor, (0.0, 10.0))
    assert res.c_star == 0.0 and res.phi_star == 1.0


@given(st.sampled_from(["power_law", "bounded", "floor"]), st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.001, 1))
def test_phi_nonnegative_and_consistent(regime, x, y, frac):
    keys = {"power_law": ("a", "p"), "bounded": ("sigma0_sq", "c_max"), "floor": ("sigma_floor_sq", "a")}[regime]
    curve = FidelityCurve(regime, dict(zip(keys, (x, y))))
    c = frac * (curve.c_max if regime == "bounded" else 10.0)
    assert curve.sigma2(c) >= 0 and curve.phi(c) >= 0
    assert curve.phi(c) == pytest.approx(c * curve.sigma2(c), rel=1e-9, abs=1e-300)


def test_fidelity_domain_errors():
    bounded = FidelityCurve("bounded", {"sigma0_sq": 1.0, "c_max": 2.0})
    with pytest.raises(ValueError):
        phi(bounded, 2.5)
    with pytest.raises(ValueError):
        phi(bounded, 0.0)
    with pytest.raises(ValueError):
        argmin_phi(bounded, (0.0, 3.0))
    with pytest.raises(ValueError):
        FidelityCurve("bounded", {"sigma0_sq": 1.0})
    with pytest.raises(ValueError):
        FidelityCurve("cubic", {})
