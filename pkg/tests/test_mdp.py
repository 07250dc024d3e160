import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagination.bounds import eq1_bound, LipschitzContext
from imagination.mdp import (
    ConstantMap,
    DomainExitError,
    LinearPolicy,
    MdpSpec,
    PolicySpec,
    QuadraticReward,
    discounted_return,
    make_linear_tight_mdp,
    make_lqg_mdp,
    make_synthetic_mdp,
    perturb,
    realized_sup,
    returns_batch,
    rollout,
    sample_ball,
    truncated_return,
    truncation_horizon,
)
from imagination.rng import make_rng


def _lip_quotients(fn, rng, ds, da, n=10_000, radius=1.0):
    s, s2 = sample_ball(rng, n, ds, radius), sample_ball(rng, n, ds, radius)
    a, a2 = sample_ball(rng, n, da, radius), sample_ball(rng, n, da, radius)
    num = np.abs(fn(s, a) - fn(s2, a2))
    if num.ndim > 1:
        num = np.linalg.norm(num, axis=-1)
    return num / (np.linalg.norm(s - s2, axis=1) + np.linalg.norm(a - a2, axis=1))


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 4),
       st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.0, 2.0))
def test_synthetic_lipschitz_constants_hold(seed, ds, da, lf, lr, lp):
    gamma = 0.5
    if gamma * lf * (1 + lp) >= 1:
        with pytest.raises(ValueError):
            make_synthetic_mdp(seed, ds, da, gamma, (lf, lr, lp))
        return
    mdp, pol = make_synthetic_mdp(seed, ds, da, gamma, (lf, lr, lp))
    assert mdp.lip_f == pytest.approx(lf, rel=1e-12, abs=1e-15)
    assert mdp.lip_r == pytest.approx(lr, rel=1e-12, abs=1e-15)
    assert pol.lip_pi == pytest.approx(lp, rel=1e-12, abs=1e-15)
    rng = make_rng("lipcheck", seed)
    assert _lip_quotients(mdp.dynamics, rng, ds, da, 2000, 3.0).max() <= mdp.lip_f + 1e-9
    assert _lip_quotients(mdp.reward, rng, ds, da, 2000, 3.0).max() <= mdp.lip_r + 1e-9
    s, s2 = rng.normal(size=(2000, ds)), rng.normal(size=(2000, ds))
    q = np.linalg.norm(pol(s) - pol(s2), axis=1) / np.linalg.norm(s - s2, axis=1)
    assert q.max() <= pol.lip_pi + 1e-9


def test_synthetic_example_contraction():
    mdp, pol = make_synthetic_mdp(0, 4, 2, 0.9, (0.5, 1.0, 0.1))
    assert 0.9 * mdp.lip_f * (1 + pol.lip_pi) == pytest.approx(0.495)


def test_zero_targets_give_constant_maps():
    mdp, pol = make_synthetic_mdp(3, 3, 2, 0.9, (0.0, 0.0, 0.0))
    t1 = rollout(mdp, pol, np.array([0.3, -0.2, 0.9]), 5)
    t2 = rollout(mdp, pol, np.array([-0.7, 0.1, 0.0]), 5)
    assert np.array_equal(t1.states[1:], t2.states[1:])
    assert np.all(t1.states[1:] == t1.states[1])
    assert np.all(t1.rewards == 0.0)


def test_contraction_violation_rejected():
    with pytest.raises(ValueError, match="contraction"):
        make_synthetic_mdp(0, 4, 2, 0.9, (1.2, 1.0, 0.0))


def test_mdp_spec_validation():
    with pytest.raises(ValueError):
        MdpSpec(1, 1, ConstantMap(np.zeros(1)), ConstantMap(np.asarray(0.0)), 1.0, 0, 0, 0)


@pytest.mark.parametrize("seed", range(30))
def test_lqg_bands(seed):
    mdp, pol = make_lqg_mdp(seed, 4, 2, 0.8, 1.0)
    assert 0.280 <= mdp.lip_f <= 0.285
    assert pol.lip_pi <= 1e-3
    assert 0.82 <= mdp.lip_r <= 1.49
    assert 0.224 <= 0.8 * mdp.lip_f * (1 + pol.lip_pi) <= 0.228


def test_lqg_domain_lipschitz_and_radius_scaling():
    mdp, _ = make_lqg_mdp(4, 4, 2, 0.8, 1.0)
    mdp2, _ = make_lqg_mdp(4, 4, 2, 0.8, 2.0)
    assert mdp2.lip_r == pytest.approx(2 * mdp.lip_r, rel=1e-12)
    q = _lip_quotients(mdp.reward, make_rng("lqg-lip"), 4, 2)
    assert q.max() <= mdp.lip_r + 1e-9
    with pytest.raises(ValueError):
        make_lqg_mdp(0, 4, 2, 0.8, 0.0)


def test_zero_quadratic_is_zero_reward():
    rew = QuadraticReward(np.zeros((3, 3)), np.zeros((2, 2)))
    assert rew.local_lipschitz(1.0) == 0.0
    assert np.all(rew(np.ones((4, 3)), np.ones((4, 2))) == 0.0)


def test_lqr_closed_loop_norm_nonincreasing():
    mdp, pol = make_lqg_mdp(2, 4, 2, 0.8, 1.0, gain="lqr")
    a, b, k = mdp.dynamics.a_mat, mdp.dynamics.b_mat, pol.action_map.k
    closed = a - b @ k
    assert np.max(np.abs(np.linalg.eigvals(closed))) < 1.0
    assert np.linalg.norm(closed, 2) < 1.0
    traj = rollout(mdp, pol, np.array([0.5, -0.3, 0.2, 0.1]), 20)
    norms = np.linalg.norm(traj.states, axis=1)
    assert np.all(np.diff(norms) <= 1e-15)


@given(st.integers(0, 1000), st.sampled_from(["random", "constant"]))
def test_perturbation_sup_within_constructed_eps(seed, kind):
    mdp, _ = make_synthetic_mdp(seed, 3, 2, 0.9, (0.5, 1.0, 0.3))
    pair = perturb(mdp, seed, 0.01, 0.05, kind)
    df, dr = realized_sup(pair, make_rng("sup", seed), 10_000, radius=3.0)
    assert df <= 0.01 + 1e-9 and dr <= 0.05 + 1e-9


def test_zero_perturbation_is_identity():
    mdp, pol = make_synthetic_mdp(1, 3, 2, 0.9, (0.5, 1.0, 0.3))
    pair = perturb(mdp, 1, 0.0, 0.0)
    s0 = np.array([0.1, 0.2, -0.3])
    t, th = rollout(pair.true_mdp, pol, s0, 20), rollout(pair.hat_mdp, pol, s0, 20)
    assert np.array_equal(t.states, th.states) and np.array_equal(t.rewards, th.rewards)


def test_reward_only_perturbation_gap():
    mdp, pol = make_synthetic_mdp(5, 3, 2, 0.9, (0.5, 1.0, 0.3))
    pair = perturb(mdp, 5, 0.0, 0.05)
    s0 = sample_ball(make_rng("s0"), 8, 3)
    gap = np.abs(truncated_return(pair.true_mdp, pol, s0) - truncated_return(pair.hat_mdp, pol, s0))
    assert gap.max() <= 0.05 / (1 - 0.9) + 1e-9


def test_rollout_horizon_one_and_consistency():
    mdp, pol = make_synthetic_mdp(2, 3, 2, 0.9, (0.5, 1.0, 0.3))
    s0 = np.array([0.4, -0.1, 0.2])
    t = rollout(mdp, pol, s0, 1)
    assert t.horizon == 1
    assert np.array_equal(t.states[0], s0)
    assert np.array_equal(t.actions[0], pol(s0))
    assert t.rewards[0] == mdp.reward(s0, pol(s0))
    long = rollout(mdp, pol, s0, 10)
    for i in range(9):
        assert np.array_equal(long.actions[i], pol(long.states[i]))
        assert np.array_equal(long.states[i + 1], mdp.dynamics(long.states[i], long.actions[i]))
    with pytest.raises(ValueError):
        rollout(mdp, pol, s0, 0)


def test_constant_reward_geometric_series():
    const = MdpSpec(1, 1, ConstantMap(np.zeros(1)), ConstantMap(np.asarray(1.0)), 0.5, 0.0, 0.0, 1.0)
    pol = PolicySpec(LinearPolicy(np.zeros((1, 1))), 0.0)
    assert truncated_return(const, pol, np.zeros(1), 1e-8) == pytest.approx(2.0, abs=1e-8)
    zero = MdpSpec(1, 1, ConstantMap(np.zeros(1)), ConstantMap(np.asarray(0.0)), 0.5, 0.0, 0.0, 0.0)
    assert truncated_return(zero, pol, np.zeros(1)) == 0.0


@given(st.floats(0.01, 0.99), st.floats(1e-3, 1e3), st.floats(1e-12, 1e-2))
def test_truncation_horizon_is_minimal(gamma, rmax, tol):
    t = truncation_horizon(gamma, rmax, tol)
    assert gamma**t * rmax / (1 - gamma) < tol
    assert t == 1 or gamma ** (t - 1) * rmax / (1 - gamma) >= tol


def test_lqg_truncated_return_matches_longer_sum():
    mdp, pol = make_lqg_mdp(3, 4, 2, 0.8, 1.0)
    s0 = sample_ball(make_rng("lqg-s0"), 5, 4)
    t = truncation_horizon(mdp.gamma, mdp.reward_bound, 1e-9)
    short = truncated_return(mdp, pol, s0, 1e-9)
    assert np.allclose(short, returns_batch(mdp, pol, s0, 2 * t), atol=1e-9, rtol=0)
    assert np.all(np.abs(short - truncated_return(mdp, pol, s0, 1e-10)) <= 1e-9)


def test_linear_tight_value_closed_form():
    lf, lr, lp, g = 0.5, 1.3, 0.4, 0.9
    mdp, pol = make_linear_tight_mdp(lf, lr, lp, g)
    s0 = 0.7
    expected = lr * (1 + lp) * s0 / (1 - g * lf * (1 + lp))
    assert truncated_return(mdp, pol, np.array([s0]), 1e-12) == pytest.approx(expected, abs=1e-10)
    traj = rollout(mdp, pol, np.array([s0]), 5)
    assert discounted_return(traj, g) == pytest.approx(sum(g**t * lr * (1 + lp) * s0 * (lf * (1 + lp)) ** t for t in range(5)))


def test_domain_exit_raises():
    mdp, pol = make_lqg_mdp(0, 4, 2, 0.8, 1.0)
    with pytest.raises(DomainExitError):
        truncated_return(mdp, pol, np.full(4, 2.0))


def test_divergence_recursion_along_paired_rollouts():
    from imagination.bounds import paired_divergence

    mdp, pol = make_synthetic_mdp(9, 4, 2, 0.9, (0.7, 1.0, 0.3))
    pair = perturb(mdp, 9, 0.05, 0.02)
    rate = mdp.lip_f * (1 + pol.lip_pi)
    for s0 in sample_ball(make_rng("div"), 10, 4):
        d = paired_divergence(pair, pol, s0, 30)
        gap = np.linalg.norm(d["s"] - d["sh"], axis=1)
        bound = np.array([0.05 * sum(rate**k for k in range(t)) for t in range(30)])
        assert np.all(gap <= bound + 1e-12)


def test_determinism_and_pickling():
    m1, p1 = make_synthetic_mdp(11, 3, 2, 0.9, (0.5, 1.0, 0.3))
    m2, p2 = make_synthetic_mdp(11, 3, 2, 0.9, (0.5, 1.0, 0.3))
    s0 = np.array([0.1, 0.5, -0.2])
    assert truncated_return(m1, p1, s0) == truncated_return(m2, p2, s0)
    m3 = pickle.loads(pickle.dumps(m1))
    assert truncated_return(m3, p1, s0) == truncated_return(m1, p1, s0)
