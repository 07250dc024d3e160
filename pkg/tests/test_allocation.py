import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imagination.allocation import (
    AllocationProblem,
    LqgAllocationConfig,
    UndefinedSensitivityError,
    lqg_allocation_instance,
    log_residual,
    oracle_allocation,
    realized_sensitivities,
    solve_allocation,
)
from imagination.bounds import LipschitzContext, dyn_coefficient
from imagination.mdp import make_linear_tight_mdp, make_lqg_mdp, make_synthetic_mdp, perturb
from imagination.scaling import PowerLaw


def _law(a, p):
    return PowerLaw(a, p, 1.0)


CTX = LipschitzContext(0.5, 1.0, 0.2, 0.9)


@st.composite
def problems(draw):
    gamma = draw(st.floats(0.3, 0.97))
    lp = draw(st.floats(0.0, 0.5))
    lf = draw(st.floats(0.0, 0.95)) / (gamma * (1 + lp))
    ctx = LipschitzContext(lf, draw(st.floats(0.05, 3.0)), lp, gamma)
    laws = (_law(draw(st.floats(0.05, 100)), draw(st.floats(0.05, 1.5))),
            _law(draw(st.floats(0.05, 100)), draw(st.floats(0.05, 1.5))))
    costs = (draw(st.floats(0.1, 10)), draw(st.floats(0.1, 10)))
    return AllocationProblem(laws, costs, draw(st.floats(1e3, 1e7)), ctx)


def test_symmetric_split():
    prob = AllocationProblem((_law(2.0, 0.4), _law(2.0, 0.4)), (1.0, 1.0), 1e5, CTX, dyn_weight=3.0, rew_weight=3.0)
    plan = solve_allocation(prob, oracle_grid=2001)
    assert plan.n_dyn_star == pytest.approx(plan.n_rew_star, rel=1e-10)
    assert plan.ratio_oracle == pytest.approx(1.0, rel=1e-4)


@given(problems())
def test_closed_form_fixed_point_and_budget(prob):
    plan = solve_allocation(prob)
    assert plan.ratio == pytest.approx(plan.ratio_closed_form, rel=1e-6)
    spent = prob.costs[0] * plan.n_dyn_star + prob.costs[1] * plan.n_rew_star
    assert spent == pytest.approx(prob.budget, rel=1e-9)


@given(problems())
def test_oracle_matches_closed_form(prob):
    plan = solve_allocation(prob, oracle_grid=2001)
    assert abs(math.log(plan.ratio_oracle) - math.log(plan.ratio)) <= 0.02


@given(problems(), st.integers(0, 2**31 - 1))
def test_optimum_beats_random_feasible_points(prob, seed):
    plan = solve_allocation(prob)
    rng = np.random.default_rng(seed)
    for u in rng.uniform(-20, 20, 50):
        assert plan.bound_value_at_optimum <= prob.objective(*prob.on_budget(u)) * (1 + 1e-12)


@given(problems(), st.floats(1.01, 10.0))
def test_cost_monotonicity(prob, factor):
    base = solve_allocation(prob).ratio
    pricier = AllocationProblem(prob.power_laws, (prob.costs[0], prob.costs[1] * factor), prob.budget * factor, prob.context)
    assert solve_allocation(pricier).ratio >= base * (1 - 1e-9)
    cheaper_dyn = AllocationProblem(prob.power_laws, (prob.costs[0] / factor, prob.costs[1]), prob.budget, prob.context)
    assert solve_allocation(cheaper_dyn).ratio >= base * (1 - 1e-9)


def test_doubling_reward_cost_raises_ratio():
    prob = AllocationProblem((_law(0.34, 0.11), _law(90.4, 0.96)), (1.0, 1.0), 1e6, CTX)
    doubled = AllocationProblem(prob.power_laws, (1.0, 2.0), 1e6, CTX)
    assert solve_allocation(doubled).ratio > solve_allocation(prob).ratio


@given(st.floats(0.3, 0.95), st.floats(0.01, 0.2))
def test_discount_monotonicity(gamma, drop):
    ctx = LipschitzContext(0.5, 1.0, 0.2, gamma)
    lower = ctx.replace(gamma=gamma - drop)
    assert lower.dyn_multiplier < ctx.dyn_multiplier
    laws = (_law(1.0, 0.3), _law(1.0, 0.6))
    hi = solve_allocation(AllocationProblem(laws, (1.0, 1.0), 1e5, ctx, rew_weight=1.0, dyn_weight=ctx.dyn_multiplier))
    lo = solve_allocation(AllocationProblem(laws, (1.0, 1.0), 1e5, lower, rew_weight=1.0, dyn_weight=lower.dyn_multiplier))
    assert lo.ratio < hi.ratio


@given(problems())
def test_larger_budget_shrinks_errors(prob):
    plan = solve_allocation(prob)
    big = AllocationProblem(prob.power_laws, prob.costs, 10 * prob.budget, prob.context)
    plan10 = solve_allocation(big, oracle_grid=2001)
    assert plan10.eps_dyn_star < plan.eps_dyn_star and plan10.eps_rew_star < plan.eps_rew_star
    assert abs(math.log(plan10.ratio_oracle / plan10.ratio)) <= 0.02
    assert plan10.ratio == pytest.approx(plan10.ratio_closed_form, rel=1e-6)


def test_problem_validation():
    with pytest.raises(ValueError):
        AllocationProblem((_law(1, 0.0), _law(1, 0.5)), (1, 1), 100, CTX)
    with pytest.raises(ValueError):
        AllocationProblem((_law(1, 0.5), _law(1, 0.5)), (1, 1), 0.5, CTX)
    with pytest.raises(ValueError):
        oracle_allocation(AllocationProblem((_law(1, 0.5), _law(1, 0.5)), (1, 1), 100, CTX), grid_points=10)


def test_log_residual_examples():
    plan = solve_allocation(AllocationProblem((_law(1, 0.5), _law(1, 0.5)), (1, 1), 1e4, CTX))
    ratio = plan.ratio
    assert log_residual(plan, (ratio, 1.0)) == pytest.approx(0.0, abs=1e-12)
    assert log_residual(plan, (ratio / 3, 1.0)) == pytest.approx(math.log(3), rel=1e-12)
    with pytest.raises(ValueError):
        log_residual(plan, (0.0, 1.0))


def test_constant_reward_shift_sensitivity():
    gamma = 0.9
    mdp, pol = make_synthetic_mdp(2, 3, 2, gamma, (0.5, 1.0, 0.3))
    rep = realized_sensitivities(perturb(mdp, 2, 0.05, 0.05, kind="constant"), pol, np.array([0.2, -0.1, 0.4]))
    assert rep.s_r == pytest.approx(1 / (1 - gamma), rel=1e-6)
    assert rep.k_lip == pytest.approx(dyn_coefficient(LipschitzContext(0.5, 1.0, 0.3, gamma)), rel=1e-12)


def test_richardson_half_step():
    mdp, pol = make_synthetic_mdp(6, 3, 2, 0.9, (0.6, 1.0, 0.3))
    rep = realized_sensitivities(perturb(mdp, 6, 0.05, 0.05), pol, np.array([0.3, 0.3, -0.2]), h=1e-3)
    assert abs(rep.s_f - rep.s_f_half) <= 1e-2 * max(rep.s_f, 1e-12) + 1e-9
    assert abs(rep.s_r - rep.s_r_half) <= 1e-2 * rep.s_r + 1e-9


def test_zero_perturbation_sensitivity_raises():
    mdp, pol = make_synthetic_mdp(0, 3, 2, 0.9, (0.5, 1.0, 0.3))
    with pytest.raises(UndefinedSensitivityError):
        realized_sensitivities(perturb(mdp, 0, 0.0, 0.05), pol, np.zeros(3))


@pytest.mark.parametrize("seed", range(3))
def test_lqg_global_coefficient_exceeds_realized(seed):
    mdp, pol = make_lqg_mdp(seed, 4, 2, 0.8, 1.0)
    rep = realized_sensitivities(perturb(mdp, seed, 0.05, 0.05), pol, 0.5 * np.ones(4) / 2)
    assert rep.k_lip >= 0 and rep.k_prime >= 0
    assert rep.k_ratio >= 1.0
    assert rep.log_residual > 0


def test_linear_tight_residual_vanishes():
    mdp, pol = make_linear_tight_mdp(0.5, 1.0, 0.2, 0.9)
    rep = realized_sensitivities(perturb(mdp, 0, 0.05, 0.05, kind="constant"), pol, np.array([0.0]))
    assert rep.s_r == pytest.approx(1 / (1 - 0.9), rel=1e-6)


def test_lqg_instance_row():
    row = lqg_allocation_instance(0, LqgAllocationConfig(fit_seeds=3, bootstrap_resamples=100))
    assert row["ell"] > 0
    assert row["K_lip"] >= row["K_prime"] > 0
    assert 0.224 <= row["contraction"] <= 0.228
