"""Experiment drivers.  Each writes CSVs under ``out`` and returns
``(summary, outputs)`` where ``outputs`` maps file names to CSV schemas."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .. import allocation as al
from .. import policy_grad as pg
from ..bounds import LipschitzContext, calibrate, dyn_coefficient
from ..mdp import DomainExitError, make_linear_tight_mdp, make_lqg_mdp, make_synthetic_mdp, perturb, sample_ball
from ..rng import make_rng
from ..scaling import TARGETS, PowerLaw, ScalingConfig, fit_scaling_runs, run_anchor_seed
from ..stats import ecdf, median, sign_test_one_sided, spearman_rho
from .config import CalibrateConfig, ExperimentConfig, FidelityConfig, ReinforceConfig
from .io import emit_csv


def parallel_map(fn: Callable, tasks: Sequence[tuple], workers: int = 1) -> list:
    """``[fn(*t) for t in tasks]``, optionally across processes; results keep
    task order regardless of completion order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# return-gap bound calibration

CALIBRATE_SCHEMA = (
    "benchmark", "index", "state_dim", "action_dim", "gamma", "L_f", "L_r", "L_pi",
    "contraction", "eps_dyn", "eps_rew", "perturbation", "lhs", "rhs", "R", "excluded",
)
ECDF_SCHEMA = ("benchmark", "R", "ecdf")


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def calibrate_task(benchmark: str, index: int, seed: int, cfg: CalibrateConfig) -> dict:
    """One configuration of the bound-calibration sweep."""
    rng = make_rng("calibrate", benchmark, seed, index)
    kind = ("random", "constant")[index % 2]
    if benchmark == "synthetic":
        ds = int(rng.choice(cfg.synthetic_state_dims))
        da = int(rng.choice(cfg.synthetic_action_dims))
        gamma = float(rng.uniform(*cfg.synthetic_gamma_range))
        lip_pi = float(rng.uniform(0.0, 1.0))
        lip_f = float(rng.uniform(0.02, 0.98)) / (gamma * (1.0 + lip_pi))
        lip_r = float(rng.uniform(*cfg.synthetic_lip_r_range))
        mdp, policy = make_synthetic_mdp(seed * 100_003 + index, ds, da, gamma, (lip_f, lip_r, lip_pi))
    elif benchmark == "lqg":
        ds, da, gamma = cfg.lqg_state_dim, cfg.lqg_action_dim, cfg.lqg_gamma
        mdp, policy = make_lqg_mdp(seed * 100_003 + index, ds, da, gamma, cfg.lqg_domain_radius)
    else:
        raise ValueError(f"unknown benchmark {benchmark!r}")
    eps_dyn = _log_uniform(rng, *cfg.eps_range)
    eps_rew = _log_uniform(rng, *cfg.eps_range)
    pair = perturb(mdp, seed * 100_003 + index, eps_dyn, eps_rew, kind)
    s0 = sample_ball(rng, cfg.n_initial_states, ds, cfg.s0_radius)
    row = dict(
        benchmark=benchmark, index=index, state_dim=ds, action_dim=da, gamma=gamma,
        L_f=mdp.lip_f, L_r=mdp.lip_r, L_pi=policy.lip_pi,
        contraction=gamma * mdp.lip_f * (1.0 + policy.lip_pi),
        eps_dyn=eps_dyn, eps_rew=eps_rew, perturbation=kind,
    )
    try:
        rep = calibrate(pair, policy, s0, cfg.tol)
        row.update(lhs=rep.lhs, rhs=rep.rhs, R=rep.ratio_R, excluded=0)
    except DomainExitError:
        row.update(lhs=float("nan"), rhs=float("nan"), R=float("nan"), excluded=1)
    return row


def run_calibrate(cfg: ExperimentConfig, out: Path) -> tuple[dict, dict]:
    c = cfg.calibrate
    tasks = [("synthetic", i, cfg.seed, c) for i in range(c.n_synthetic)]
    tasks += [("lqg", i, cfg.seed, c) for i in range(c.n_lqg)]
    rows = parallel_map(calibrate_task, tasks, cfg.workers)
    emit_csv(out / "calibrate.csv", rows, CALIBRATE_SCHEMA)

    ecdf_rows, summary = [], {}
    kept = [r for r in rows if not r["excluded"]]
    for bench in ("synthetic", "lqg", "pooled"):
        rs = [r["R"] for r in kept if bench == "pooled" or r["benchmark"] == bench]
        if not rs:
            continue
        e = ecdf(rs)
        xs, ys = e.steps()
        pick = np.unique(np.linspace(0, len(xs) - 1, min(c.ecdf_points, len(xs))).astype(int))
        ecdf_rows += [dict(benchmark=bench, R=float(xs[i]), ecdf=float(ys[i])) for i in pick]
        summary[bench] = dict(n=len(rs), median_R=median(rs), max_R=float(max(rs)), violations=int(sum(r > 1.0 for r in rs)))
    summary["excluded"] = len(rows) - len(kept)
    emit_csv(out / "calibrate_ecdf.csv", ecdf_rows, ECDF_SCHEMA)
    return summary, {"calibrate.csv": CALIBRATE_SCHEMA, "calibrate_ecdf.csv": ECDF_SCHEMA}


# ---------------------------------------------------------------------------
# error scaling

SCALING_RUN_SCHEMA = ("n", "seed", "head", "val_mse", "plateau")
SCALING_PLOT_SCHEMA = ("head", "n", "mean_mse", "sem", "seeds")
SCALING_FIT_SCHEMA = (
    "target", "amplitude", "exponent", "r_squared", "se_amplitude", "se_exponent",
    "ci_amplitude_lo", "ci_amplitude_hi", "ci_exponent_lo", "ci_exponent_hi",
)


def _scaling_task(scfg: ScalingConfig, n: int, seed: int, base_seed: int):
    return run_anchor_seed(scfg, n, seed, base_seed)


def fit_rows(laws: dict[str, PowerLaw]) -> list[dict]:
    return [
        dict(
            target=t, amplitude=law.amplitude, exponent=law.exponent, r_squared=law.r_squared,
            se_amplitude=law.se_amplitude, se_exponent=law.se_exponent,
            ci_amplitude_lo=law.ci_amplitude[0], ci_amplitude_hi=law.ci_amplitude[1],
            ci_exponent_lo=law.ci_exponent[0], ci_exponent_hi=law.ci_exponent[1],
        )
        for t, law in laws.items()
    ]


def scaling_sweep(scfg: ScalingConfig, seed: int, workers: int = 1):
    tasks = [(scfg, n, s, seed) for n in scfg.anchors for s in range(scfg.seeds)]
    runs = parallel_map(_scaling_task, tasks, workers)
    return runs, fit_scaling_runs(scfg, runs, seed)


def run_scale(cfg: ExperimentConfig, out: Path) -> tuple[dict, dict]:
    runs, laws = scaling_sweep(cfg.scaling, cfg.seed, cfg.workers)
    run_rows, plot_rows = [], []
    for head in TARGETS:
        run_rows += [
            dict(n=r.n, seed=r.seed, head=head, val_mse=getattr(r, f"{head}_mse"), plateau=getattr(r, f"{head}_plateau"))
            for r in runs
        ]
        for n in cfg.scaling.anchors:
            v = np.array([getattr(r, f"{head}_mse") for r in runs if r.n == n])
            sem = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
            plot_rows.append(dict(head=head, n=n, mean_mse=float(v.mean()), sem=sem, seeds=len(v)))
    emit_csv(out / "scaling_runs.csv", run_rows, SCALING_RUN_SCHEMA)
    emit_csv(out / "scaling_fit.csv", fit_rows(laws), SCALING_FIT_SCHEMA)
    emit_csv(out / "scaling_plot.csv", plot_rows, SCALING_PLOT_SCHEMA)
    summary = {t: dict(amplitude=l.amplitude, exponent=l.exponent, r_squared=l.r_squared, ci_exponent=l.ci_exponent) for t, l in laws.items()}
    return summary, {"scaling_runs.csv": SCALING_RUN_SCHEMA, "scaling_fit.csv": SCALING_FIT_SCHEMA, "scaling_plot.csv": SCALING_PLOT_SCHEMA}


# ---------------------------------------------------------------------------
# allocation

LQG_SCHEMA = (
    "seed", "L_f", "L_pi", "L_r", "contraction", "A_d", "A_r", "alpha_d", "alpha_r", "R2_d", "R2_r",
    "K_lip", "K_prime", "S_f", "S_r", "ell", "n_dyn_star", "n_rew_star", "ratio_global", "boundary_excluded",
)
LINEAR_SCHEMA = ("index", "L_f", "L_pi", "L_r", "gamma", "cost_ratio", "S_f", "S_r", "K_lip", "ratio_predicted", "ratio_realized", "ell")
ORACLE_SCHEMA = ("index", "alpha", "beta", "c_dyn", "c_rew", "budget", "ratio_closed_form", "ratio_oracle", "log_gap", "eq3_gap", "budget_gap")


def random_allocation_problem(rng: np.random.Generator) -> al.AllocationProblem:
    """Random feasible problem over wide ranges of every ingredient."""
    gamma = float(rng.uniform(0.0, 0.95))
    lip_pi = float(rng.uniform(0.0, 1.0))
    lip_f = float(rng.uniform(0.0, 0.95)) / (max(gamma, 1e-12) * (1.0 + lip_pi))
    ctx = LipschitzContext(min(lip_f, 10.0), float(rng.uniform(0.01, 3.0)), lip_pi, gamma)
    law = lambda: PowerLaw(10 ** rng.uniform(-2, 2), float(rng.uniform(0.05, 1.5)), 1.0)  # noqa: E731
    costs = (10 ** rng.uniform(-1, 1), 10 ** rng.uniform(-1, 1))
    return al.AllocationProblem((law(), law()), costs, float(10 ** rng.uniform(3, 7)), ctx)


def oracle_rows(n: int, seed: int, grid: int) -> list[dict]:
    rng = make_rng("oracle-problems", seed)
    rows = []
    for i in range(n):
        p = random_allocation_problem(rng)
        plan = al.solve_allocation(p, grid)
        spent = p.costs[0] * plan.n_dyn_star + p.costs[1] * plan.n_rew_star
        rows.append(dict(
            index=i, alpha=p.power_laws[0].exponent, beta=p.power_laws[1].exponent,
            c_dyn=p.costs[0], c_rew=p.costs[1], budget=p.budget,
            ratio_closed_form=plan.ratio, ratio_oracle=plan.ratio_oracle,
            log_gap=abs(math.log(plan.ratio) - math.log(plan.ratio_oracle)),
            eq3_gap=abs(plan.ratio / plan.ratio_closed_form - 1.0),
            budget_gap=abs(spent - p.budget) / p.budget,
        ))
    return rows


def linear_consistency_rows(cfg: ExperimentConfig) -> list[dict]:
    """Linear-value MDPs, where realized sensitivities equal the analytic
    coefficients, so predicted and realized ratios must coincide."""
    a = cfg.allocate
    law_d, law_r = PowerLaw(0.3, 0.11, 1.0), PowerLaw(90.0, 0.96, 1.0)
    rows = []
    i = 0
    for lip_f in a.linear_lip_f:
        for lip_pi in a.linear_lip_pi:
            if lip_f * (1.0 + lip_pi) >= 1.0:
                continue
            mdp, policy = make_linear_tight_mdp(lip_f, 1.0, lip_pi, a.linear_gamma)
            pair = perturb(mdp, i, 1.0, 1.0, kind="constant")
            sens = al.realized_sensitivities(pair, policy, np.zeros(1))
            ctx = LipschitzContext(lip_f, 1.0, lip_pi, a.linear_gamma)
            for cr in a.linear_cost_ratio:
                base = al.AllocationProblem((law_d, law_r), (1.0, cr), 1e6, ctx)
                predicted = al.solve_allocation(base)
                realized = al.solve_allocation(replace(base, dyn_weight=sens.s_f, rew_weight=sens.s_r))
                rows.append(dict(
                    index=i, L_f=lip_f, L_pi=lip_pi, L_r=1.0, gamma=a.linear_gamma, cost_ratio=cr,
                    S_f=sens.s_f, S_r=sens.s_r, K_lip=sens.k_lip,
                    ratio_predicted=predicted.ratio, ratio_realized=realized.ratio,
                    ell=math.log(predicted.ratio) - math.log(realized.ratio),
                ))
                i += 1
    return rows


def run_allocate(cfg: ExperimentConfig, out: Path) -> tuple[dict, dict]:
    a = cfg.allocate
    lqg = parallel_map(al.lqg_allocation_instance, [(s, a.lqg) for s in range(a.n_lqg)], cfg.workers)
    emit_csv(out / "lqg_per_instance.csv", lqg, LQG_SCHEMA)
    lin = linear_consistency_rows(cfg)
    emit_csv(out / "linear_value.csv", lin, LINEAR_SCHEMA)
    orc = oracle_rows(a.n_oracle_problems, cfg.seed, a.oracle_grid)
    emit_csv(out / "oracle.csv", orc, ORACLE_SCHEMA)

    kept = [r for r in lqg if not r["boundary_excluded"]]
    ells = [r["ell"] for r in kept]
    k_ratio = [r["K_lip"] / r["K_prime"] for r in kept]
    summary = dict(
        lqg=dict(
            n=len(kept), excluded=len(lqg) - len(kept), median_ell=median(ells) if ells else float("nan"),
            n_positive=int(sum(e > 0 for e in ells)),
            sign_test_p=sign_test_one_sided(int(sum(e > 0 for e in ells)), len(ells)) if ells else float("nan"),
            k_ratio_min=min(k_ratio, default=float("nan")), k_ratio_median=median(k_ratio) if k_ratio else float("nan"),
            k_ratio_max=max(k_ratio, default=float("nan")),
        ),
        linear=dict(
            n=len(lin), max_abs_ell=max((abs(r["ell"]) for r in lin), default=0.0),
            spearman=spearman_rho([r["ratio_predicted"] for r in lin], [r["ratio_realized"] for r in lin]) if len(lin) > 1 else float("nan"),
        ),
        oracle=dict(n=len(orc), max_log_gap=max((r["log_gap"] for r in orc), default=0.0)),
    )
    return summary, {"lqg_per_instance.csv": LQG_SCHEMA, "linear_value.csv": LINEAR_SCHEMA, "oracle.csv": ORACLE_SCHEMA}


# ---------------------------------------------------------------------------
# REINFORCE

INFLATION_SCHEMA = ("K", "H", "gamma", "sigma2", "var_clean", "var_noisy", "cap", "inflation", "ci_lo", "ci_hi")
UNBIASED_SCHEMA = ("K", "sigma2", "coordinate", "mean_diff", "se", "z", "threshold")
BIAS_SCHEMA = ("bias", "K", "mse", "mse_se", "var_single", "bias_grad_sq", "predicted", "excess", "excess_se")


def inflation_grid(r: ReinforceConfig, seed: int) -> list[pg.InflationReport]:
    env, policy = pg.make_pg_env(r.env_seed, r.state_dim, r.action_dim)
    out = []
    for H in r.horizon_grid:
        for gamma in r.gamma_grid:
            for K in r.K_grid:
                rng = make_rng("inflation-grid", seed, H, K, str(gamma))
                terms = pg.simulate_terms(env, policy, r.reps * K, H, gamma, rng, noise=r.noise)
                for s2 in r.sigma2_grid:
                    out.append(pg.variance_inflation_check(
                        env, policy, K, H, gamma, s2, r.reps, seed, r.bootstrap_resamples, terms=terms,
                    ))
    return out


def bias_reports(r: ReinforceConfig, seed: int) -> dict[str, list[pg.BiasMseReport]]:
    env, policy = pg.make_pg_env(r.env_seed, r.state_dim, r.action_dim)
    ref = pg.reference_gradient(env, policy, r.horizon, r.gamma, r.reference_rollouts, seed)
    biases = {"zero": None, "constant": pg.ConstantBias(0.5), "action_norm": pg.ActionNormBias(1.0)}
    return {
        name: [
            pg.bias_mse_decomposition(env, policy, K, r.horizon, r.gamma, b, r.bias_reps, seed, ref, r.reference_rollouts)
            for K in r.bias_K_grid
        ]
        for name, b in biases.items()
    }


def run_reinforce(cfg: ExperimentConfig, out: Path) -> tuple[dict, dict]:
    r = cfg.reinforce
    env, policy = pg.make_pg_env(r.env_seed, r.state_dim, r.action_dim)
    infl = inflation_grid(r, cfg.seed)
    emit_csv(out / "reinforce_inflation.csv", [x.row() for x in infl], INFLATION_SCHEMA)

    unb = pg.unbiasedness_grid(env, policy, r.sigma2_grid, r.unbiased_K_grid, r.horizon, r.gamma, r.unbiased_reps, cfg.seed)
    unb_rows = [
        dict(K=u.K, sigma2=u.sigma2, coordinate=j, mean_diff=float(u.mean_diff[j]), se=float(u.se[j]), z=float(u.z[j]), threshold=u.threshold)
        for u in unb for j in range(len(u.mean_diff))
    ]
    emit_csv(out / "reinforce_unbiased.csv", unb_rows, UNBIASED_SCHEMA)

    bias = bias_reports(r, cfg.seed)
    bias_rows = [
        dict(bias=name, K=b.K, mse=b.mse, mse_se=b.mse_se, var_single=b.var_single, bias_grad_sq=b.bias_grad_sq,
             predicted=b.predicted, excess=b.excess, excess_se=b.excess_se)
        for name, reps in bias.items() for b in reps
    ]
    emit_csv(out / "reinforce_bias.csv", bias_rows, BIAS_SCHEMA)
    summary = dict(
        inflation_holds=all(x.holds for x in infl),
        unbiased_holds=all(u.holds for u in unb),
        bias_identity_holds=all(b.holds for reps in bias.values() for b in reps),
    )
    return summary, {
        "reinforce_inflation.csv": INFLATION_SCHEMA,
        "reinforce_unbiased.csv": UNBIASED_SCHEMA,
        "reinforce_bias.csv": BIAS_SCHEMA,
    }


# ---------------------------------------------------------------------------
# reward fidelity

FIDELITY_SCHEMA = ("regime", "c", "sigma2", "phi")


def fidelity_curves(f: FidelityConfig) -> list[pg.FidelityCurve]:
    curves = {
        "power_law": pg.FidelityCurve("power_law", {"a": f.a, "p": f.p}),
        "bounded": pg.FidelityCurve("bounded", {"sigma0_sq": f.sigma0**2, "c_max": f.cmax}),
        "floor": pg.FidelityCurve("floor", {"sigma_floor_sq": f.sigma_floor**2, "a": f.a}),
    }
    if f.regime == "all":
        return list(curves.values())
    if f.regime not in curves:
        raise ValueError(f"unknown regime {f.regime!r}")
    return [curves[f.regime]]


def run_fidelity(cfg: ExperimentConfig, out: Path) -> tuple[dict, dict]:
    f = cfg.fidelity
    rows, summary = [], {}
    for curve in fidelity_curves(f):
        if curve.regime == "bounded":
            cs = np.linspace(0.0, curve.c_max, f.points)
            res = pg.argmin_phi(curve, (0.0, curve.c_max))
        else:
            cs = np.linspace(f.c_lo, f.c_hi, f.points)
            res = pg.argmin_phi(curve, (f.c_lo, f.c_hi))
        table = pg.fidelity_table(curve, cs)
        rows += table
        peak = max(table, key=lambda t: t["phi"])
        summary[curve.regime] = dict(
            argmin=res.c_star, min_phi=res.phi_star, n_ties=len(res.ties),
            tie_endpoints=sorted({res.ties[0], res.ties[-1]}), peak_c=peak["c"],
        )
    emit_csv(out / "fidelity.csv", rows, FIDELITY_SCHEMA)
    return summary, {"fidelity.csv": FIDELITY_SCHEMA}


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], tuple[dict, dict]]] = {
    "calibrate": run_calibrate,
    "scale": run_scale,
    "allocate": run_allocate,
    "reinforce": run_reinforce,
    "fidelity": run_fidelity,
}


def jsonable_summary(x: Any) -> Any:
    if isinstance(x, dict):
        return {k: jsonable_summary(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable_summary(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x
