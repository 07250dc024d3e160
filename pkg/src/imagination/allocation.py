"""Optimal split of a sample budget between dynamics and reward data.

With power-law errors ``eps_dyn = A_d N_dyn^-alpha`` and
``eps_rew = A_r N_rew^-beta``, the return-gap bound becomes
``C_d N_dyn^-alpha + C_r N_rew^-beta`` and is minimized on the budget line
``c_dyn N_dyn + c_rew N_rew = B``.  The stationarity condition is solved in
closed form up to a one-dimensional root; a brute-force grid search serves
as an independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .bounds import LipschitzContext, dyn_coefficient
from .mdp import (
    DomainExitError,
    MdpSpec,
    PerturbedPair,
    PolicySpec,
    Shifted,
    make_lqg_mdp,
    perturb,
    sample_ball,
    truncated_return,
)
from .rng import make_rng
from .scaling import PowerLaw, fit_power_law


@dataclass(frozen=True)
class AllocationProblem:
    """``dyn_weight``/``rew_weight`` are the coefficients of ``eps_dyn`` and
    ``eps_rew`` in the bound; by default the global-Lipschitz values
    ``dyn_coefficient(context)`` and ``1/(1-gamma)``."""

    power_laws: tuple[PowerLaw, PowerLaw]
    costs: tuple[float, float]
    budget: float
    context: LipschitzContext
    dyn_weight: Optional[float] = None
    rew_weight: Optional[float] = None

    def __post_init__(self):
        dyn, rew = self.power_laws
        if dyn.exponent <= 0 or rew.exponent <= 0:
            raise ValueError("power-law exponents must be positive")
        if dyn.amplitude <= 0 or rew.amplitude <= 0:
            raise ValueError("power-law amplitudes must be positive")
        if min(self.costs) <= 0:
            raise ValueError("sample costs must be positive")
        if self.budget <= max(self.costs):
            raise ValueError("budget must exceed the larger per-sample cost")

    @property
    def weights(self) -> tuple[float, float]:
        wd = dyn_coefficient(self.context) if self.dyn_weight is None else self.dyn_weight
        wr = 1.0 / (1.0 - self.context.gamma) if self.rew_weight is None else self.rew_weight
        return wd, wr

    @property
    def coefficients(self) -> tuple[float, float]:
        """``(C_d, C_r)``."""
        wd, wr = self.weights
        return wd * self.power_laws[0].amplitude, wr * self.power_laws[1].amplitude

    @property
    def multiplier(self) -> float:
        """Factor ``k`` in ``N_dyn*/N_rew* = k * eps_dyn*/eps_rew*``."""
        wd, wr = self.weights
        alpha, beta = self.power_laws[0].exponent, self.power_laws[1].exponent
        return (alpha / beta) * (wd / wr) * (self.costs[1] / self.costs[0])

    def objective(self, n_dyn, n_rew):
        c_d, c_r = self.coefficients
        return c_d * np.power(n_dyn, -self.power_laws[0].exponent) + c_r * np.power(n_rew, -self.power_laws[1].exponent)

    def on_budget(self, log_ratio: float) -> tuple[float, float]:
        """Point on the budget line with ``log(N_dyn/N_rew) = log_ratio``."""
        c_dyn, c_rew = self.costs
        rho = math.exp(log_ratio)
        n_rew = self.budget / (c_dyn * rho + c_rew)
        return rho * n_rew, n_rew


@dataclass(frozen=True)
class AllocationPlan:
    n_dyn_star: float
    n_rew_star: float
    ratio_closed_form: float
    ratio_oracle: float
    bound_value_at_optimum: float
    eps_dyn_star: float
    eps_rew_star: float

    @property
    def ratio(self) -> float:
        return self.n_dyn_star / self.n_rew_star


def _plan(problem: AllocationProblem, n_dyn: float, n_rew: float, ratio_oracle: float) -> AllocationPlan:
    dyn, rew = problem.power_laws
    eps_d, eps_r = float(dyn(n_dyn)), float(rew(n_rew))
    return AllocationPlan(
        n_dyn_star=n_dyn,
        n_rew_star=n_rew,
        ratio_closed_form=problem.multiplier * eps_d / eps_r,
        ratio_oracle=ratio_oracle,
        bound_value_at_optimum=float(problem.objective(n_dyn, n_rew)),
        eps_dyn_star=eps_d,
        eps_rew_star=eps_r,
    )


def solve_allocation(problem: AllocationProblem, oracle_grid: Optional[int] = None) -> AllocationPlan:
    """Minimizer of the bound on the budget line.

    The first-order conditions ``alpha C_d N_dyn^-(alpha+1) = lambda c_dyn``
    and ``beta C_r N_rew^-(beta+1) = lambda c_rew`` reduce to one equation in
    the budget share ``x = c_dyn N_dyn / B``; it is solved in logit
    coordinates, where the residual is strictly decreasing.
    """
    c_d, c_r = problem.coefficients
    alpha, beta = problem.power_laws[0].exponent, problem.power_laws[1].exponent
    c_dyn, c_rew = problem.costs
    log_b = math.log(problem.budget)

    def residual(u):
        # log of (marginal gain per unit cost of dynamics) over (same for reward)
        log_x = -np.logaddexp(0.0, -u)
        log_1mx = -np.logaddexp(0.0, u)
        log_nd = log_b + log_x - math.log(c_dyn)
        log_nr = log_b + log_1mx - math.log(c_rew)
        lhs = math.log(alpha * c_d / c_dyn) - (alpha + 1.0) * log_nd
        rhs = math.log(beta * c_r / c_rew) - (beta + 1.0) * log_nr
        return lhs - rhs

    lo, hi = -50.0, 50.0
    while residual(lo) <= 0:
        lo *= 2
    while residual(hi) >= 0:
        hi *= 2
    u = brentq(residual, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    x = 1.0 / (1.0 + math.exp(-u))
    n_dyn = x * problem.budget / c_dyn
    n_rew = (problem.budget - c_dyn * n_dyn) / c_rew
    ratio_oracle = oracle_allocation(problem, oracle_grid).ratio if oracle_grid else float("nan")
    return _plan(problem, n_dyn, n_rew, ratio_oracle)


def _golden_section(fn, a: float, b: float, tol: float = 1e-12, maxiter: int = 500) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(maxiter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def oracle_allocation(problem: AllocationProblem, grid_points: int = 2001, span: float = 60.0) -> AllocationPlan:
    """Brute-force minimization over a log-spaced grid of ``N_dyn/N_rew``
    on the budget line, refined by golden-section search."""
    if grid_points < 100:
        raise ValueError("grid_points must be at least 100")
    grid = np.linspace(-span, span, grid_points)
    vals = np.array([problem.objective(*problem.on_budget(g)) for g in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    best = _golden_section(lambda g: float(problem.objective(*problem.on_budget(g))), a, b)
    n_dyn, n_rew = problem.on_budget(best)
    return _plan(problem, n_dyn, n_rew, n_dyn / n_rew)


def log_residual(plan: AllocationPlan, eps_star: tuple[float, float], multiplier: float = 1.0) -> float:
    """``log(N_dyn*/N_rew*) - log(multiplier * eps_dyn*/eps_rew*)``.

    With ``multiplier=1`` this is the plain residual between the sample and
    error ratios; passing a realized-sensitivity multiplier compares a
    global-constant plan with the realized prediction at the same errors.
    """
    if min(plan.n_dyn_star, plan.n_rew_star, eps_star[0], eps_star[1], multiplier) <= 0:
        raise ValueError("log_residual needs positive arguments")
    return math.log(plan.n_dyn_star / plan.n_rew_star) - math.log(multiplier * eps_star[0] / eps_star[1])


# ---------------------------------------------------------------------------
# realized value sensitivities


class UndefinedSensitivityError(ValueError):
    pass


@dataclass(frozen=True)
class SensitivityReport:
    s_f: float
    s_r: float
    k_lip: float
    k_prime: float
    log_residual: float
    s_f_half: float = float("nan")
    s_r_half: float = float("nan")

    @property
    def k_ratio(self) -> float:
        return self.k_lip / self.k_prime


def _value_shift(mdp: MdpSpec, policy: PolicySpec, s0, dynamics=None, reward=None, tol=1e-12) -> float:
    shifted = replace(
        mdp,
        dynamics=dynamics or mdp.dynamics,
        reward=reward or mdp.reward,
        reward_bound=mdp.reward_bound + (1.0 if reward is not None else 0.0),
    )
    return truncated_return(shifted, policy, s0, tol)


def realized_sensitivities(
    pair: PerturbedPair, policy: PolicySpec, s0, h: float = 1e-3, tol: float = 1e-12
) -> SensitivityReport:
    """One-sided finite-difference sensitivities of the policy value along the
    realized perturbations ``df = f_hat - f`` and ``dr = r_hat - r``.

    Quotients are normalized by the sup-norm size of each perturbation
    (``eps_dyn``, ``eps_rew``).  ``log_residual`` is the log of the
    global-constant multiplier over the realized one,
    ``log(K_Lip (1-gamma) S_r / S_f)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if pair.eps_dyn == 0 or pair.eps_rew == 0:
        raise UndefinedSensitivityError("sensitivity along a zero perturbation is undefined")
    m = pair.true_mdp
    ctx = LipschitzContext(m.lip_f, m.lip_r, policy.lip_pi, m.gamma)
    v0 = truncated_return(m, policy, s0, tol)

    def quotients(step):
        vf = _value_shift(m, policy, s0, dynamics=Shifted(m.dynamics, pair.dyn_direction, step * pair.eps_dyn), tol=tol)
        vr = _value_shift(m, policy, s0, reward=Shifted(m.reward, pair.rew_direction, step * pair.eps_rew), tol=tol)
        return abs(vf - v0) / (step * pair.eps_dyn), abs(vr - v0) / (step * pair.eps_rew)

    s_f, s_r = quotients(h)
    s_f_half, s_r_half = quotients(h / 2.0)
    k_lip = dyn_coefficient(ctx)
    contraction_realized = m.gamma * s_f * (1.0 + policy.lip_pi)
    if contraction_realized >= 1.0:
        k_prime = float("inf")
    else:
        k_prime = m.gamma * m.lip_r * (1.0 + policy.lip_pi) / ((1.0 - m.gamma) * (1.0 - contraction_realized))
    if s_f == 0.0 or s_r == 0.0:
        ell = float("nan")
    else:
        ell = math.log(k_lip * (1.0 - m.gamma) * s_r / s_f)
    return SensitivityReport(s_f, s_r, k_lip, k_prime, ell, s_f_half, s_r_half)


# ---------------------------------------------------------------------------
# LQG allocation arm


def _quadratic_features(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    iu_s = np.triu_indices(s.shape[1])
    iu_a = np.triu_indices(a.shape[1])
    ss = (s[:, :, None] * s[:, None, :])[:, iu_s[0], iu_s[1]]
    aa = (a[:, :, None] * a[:, None, :])[:, iu_a[0], iu_a[1]]
    return np.concatenate([ss, aa, np.ones((len(s), 1))], axis=1)


def lqg_model_errors(
    mdp: MdpSpec,
    rng: np.random.Generator,
    n: int,
    noise_dyn: float,
    noise_rew: float,
    holdout: int = 2_000,
) -> tuple[float, float]:
    """Held-out excess MSE of least-squares dynamics and reward models fit
    on ``n`` noisy samples drawn uniformly from the operating domain."""
    radius = mdp.reward_domain_radius or 1.0
    ds, da = mdp.state_dim, mdp.action_dim

    def draw(k):
        return sample_ball(rng, k, ds, radius), sample_ball(rng, k, da, radius)

    s, a = draw(n)
    x = np.concatenate([s, a], axis=1)
    y_dyn = mdp.dynamics(s, a) + noise_dyn * rng.standard_normal((n, ds))
    coef_dyn, *_ = np.linalg.lstsq(x, y_dyn, rcond=None)
    phi = _quadratic_features(s, a)
    y_rew = mdp.reward(s, a) + noise_rew * rng.standard_normal(n)
    coef_rew, *_ = np.linalg.lstsq(phi, y_rew, rcond=None)

    sh, ah = draw(holdout)
    xh = np.concatenate([sh, ah], axis=1)
    err_dyn = ((xh @ coef_dyn - mdp.dynamics(sh, ah)) ** 2).sum(axis=1).mean()
    err_rew = ((_quadratic_features(sh, ah) @ coef_rew - mdp.reward(sh, ah)) ** 2).mean()
    return float(err_dyn), float(err_rew)


@dataclass(frozen=True)
class LqgAllocationConfig:
    state_dim: int = 4
    action_dim: int = 2
    gamma: float = 0.8
    domain_radius: float = 1.0
    eps_dyn: float = 0.05
    eps_rew: float = 0.05
    anchors: tuple[int, ...] = (100, 200, 500, 1_000, 2_000)
    fit_seeds: int = 10
    noise_dyn: float = 0.01
    noise_rew: float = 0.02
    costs: tuple[float, float] = (1.0, 10.0)
    budget: float = 1e5
    h: float = 1e-3
    bootstrap_resamples: int = 200
    s0_radius: float = 1.0


def lqg_allocation_instance(seed: int, cfg: LqgAllocationConfig = LqgAllocationConfig()) -> dict:
    """One LQG configuration: per-instance power laws, global-constant plan,
    realized sensitivities and the log-ratio residual."""
    mdp, policy = make_lqg_mdp(seed, cfg.state_dim, cfg.action_dim, cfg.gamma, cfg.domain_radius)
    rng = make_rng("lqg-allocation", seed)
    errs = {n: [lqg_model_errors(mdp, rng, n, cfg.noise_dyn, cfg.noise_rew) for _ in range(cfg.fit_seeds)] for n in cfg.anchors}
    law_d = fit_power_law(cfg.anchors, [[e[0] for e in errs[n]] for n in cfg.anchors], cfg.bootstrap_resamples, seed)
    law_r = fit_power_law(cfg.anchors, [[e[1] for e in errs[n]] for n in cfg.anchors], cfg.bootstrap_resamples, seed)
    ctx = LipschitzContext(mdp.lip_f, mdp.lip_r, policy.lip_pi, mdp.gamma)
    row = {
        "seed": seed,
        "L_f": mdp.lip_f,
        "L_pi": policy.lip_pi,
        "L_r": mdp.lip_r,
        "contraction": ctx.contraction,
        "A_d": law_d.amplitude,
        "A_r": law_r.amplitude,
        "alpha_d": law_d.exponent,
        "alpha_r": law_r.exponent,
        "R2_d": law_d.r_squared,
        "R2_r": law_r.r_squared,
    }
    s0 = sample_ball(rng, 1, cfg.state_dim, cfg.s0_radius)[0]
    pair = perturb(mdp, seed, cfg.eps_dyn, cfg.eps_rew)
    try:
        sens = realized_sensitivities(pair, policy, s0, cfg.h)
        excluded = ctx.contraction >= 0.99
    except DomainExitError:
        sens, excluded = None, True
    problem = AllocationProblem((law_d, law_r), cfg.costs, cfg.budget, ctx)
    plan = solve_allocation(problem)
    if sens is not None:
        realized = replace(problem, dyn_weight=sens.s_f, rew_weight=sens.s_r)
        ell = log_residual(plan, (plan.eps_dyn_star, plan.eps_rew_star), realized.multiplier)
        row.update(
            K_lip=sens.k_lip, K_prime=sens.k_prime, S_f=sens.s_f, S_r=sens.s_r, ell=ell,
        )
    else:
        row.update(K_lip=dyn_coefficient(ctx), K_prime=float("nan"), S_f=float("nan"), S_r=float("nan"), ell=float("nan"))
    row.update(
        n_dyn_star=plan.n_dyn_star,
        n_rew_star=plan.n_rew_star,
        ratio_global=plan.ratio,
        boundary_excluded=int(excluded),
    )
    return row
