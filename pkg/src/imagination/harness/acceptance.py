"""Acceptance suite: one function per criterion, each returning a
``CriterionResult`` with a one-line detail string."""

from __future__ import annotations

import filecmp
import math
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .. import policy_grad as pg
from ..allocation import lqg_allocation_instance
from ..bounds import LipschitzContext, check_straightening, dyn_coefficient, latent_rollout, make_velocity_map
from ..rng import make_rng
from ..scaling import Adam, PowerLaw, StudentMlp, fit_power_law
from ..stats import median, sign_test_one_sided
from .config import ExperimentConfig, load_config
from .experiments import (
    bias_reports,
    calibrate_task,
    inflation_grid,
    oracle_rows,
    run_calibrate,
    scaling_sweep,
)


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str, limit: Optional[float], body: Callable[[], tuple[bool, str]]) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail = body()
    dt = time.perf_counter() - t0
    if limit is not None and dt > limit:
        passed, detail = False, f"{detail}; runtime {dt:.1f}s exceeds {limit:.0f}s"
    return CriterionResult(number, name, bool(passed), detail, dt)


# ---------------------------------------------------------------------------


def bound_soundness(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        c = cfg.calibrate
        rows = [calibrate_task("synthetic", i, cfg.seed, c) for i in range(c.n_synthetic)]
        rows += [calibrate_task("lqg", i, cfg.seed, c) for i in range(c.n_lqg)]
        kept = [r for r in rows if not r["excluded"]]
        n_syn = sum(r["benchmark"] == "synthetic" for r in kept)
        n_lqg = len(kept) - n_syn
        viol = sum(r["R"] > 1.0 for r in kept)
        med = median([r["R"] for r in kept])
        ok = n_syn >= 200 and n_lqg >= 200 and viol == 0 and med < 0.5
        return ok, f"{n_syn} synthetic + {n_lqg} LQG, violations {viol}, pooled median R {med:.4f}"

    return _timed(1, "bound soundness", 120.0, body)


def coefficient_monotonicity(cfg: ExperimentConfig, n: int = 10_000) -> CriterionResult:
    def body():
        rng = make_rng("monotonicity", cfg.seed)
        checked = decreases = 0
        while checked < n:
            gamma = float(rng.uniform(0.0, 0.99))
            lip_pi = float(rng.uniform(0.0, 2.0))
            lip_f = float(rng.uniform(0.0, 1.0)) / (max(gamma, 1e-9) * (1.0 + lip_pi))
            ctx = LipschitzContext(min(lip_f, 50.0), float(rng.uniform(0.0, 5.0)), lip_pi, gamma)
            which = ("lip_f", "lip_r", "lip_pi")[checked % 3]
            bumped_val = getattr(ctx, which) * (1.0 + float(rng.uniform(0.0, 0.5))) + float(rng.uniform(0.0, 0.1))
            try:
                bumped = ctx.replace(**{which: bumped_val})
            except ValueError:
                continue  # left the feasible region
            checked += 1
            decreases += dyn_coefficient(bumped) < dyn_coefficient(ctx)
        return decreases == 0, f"{checked} upward perturbations, {decreases} decreases"

    return _timed(2, "coefficient monotonicity", None, body)


def straightening(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        worst = -math.inf
        for eps in (0.1, 0.3, 0.5, 0.9):
            for k in range(100):
                rng = make_rng("straighten", cfg.seed, str(eps), k)
                vmap = make_velocity_map(rng, 8, eps)
                rep = check_straightening(latent_rollout(vmap, rng.standard_normal(8), 51), eps)
                if not rep.holds:
                    return False, f"eps={eps} rollout {k}: loss {rep.max_loss:.3g} > bound {rep.bound:.3g}"
                worst = max(worst, rep.max_loss / rep.bound)
        return True, f"400 rollouts x 50 steps, max loss/bound {worst:.3f}"

    return _timed(3, "straightening bound", 5.0, body)


def oracle_equivalence(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        rows = oracle_rows(100, cfg.seed, cfg.allocate.oracle_grid)
        gap = max(r["log_gap"] for r in rows)
        budget = max(r["budget_gap"] for r in rows)
        return gap <= 0.02 and budget <= 1e-9, f"100 problems, max |log ratio gap| {gap:.2e}, max budget error {budget:.1e}"

    return _timed(4, "allocation oracle", 30.0, body)


def scaling_exponents(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        _, laws = scaling_sweep(cfg.scaling, cfg.seed, cfg.workers)
        d, r = laws["dynamics"], laws["reward"]
        detail = (
            f"alpha {d.exponent:.3f} (R2 {d.r_squared:.3f}, CI {d.ci_exponent[0]:.3f}..{d.ci_exponent[1]:.3f}), "
            f"beta {r.exponent:.3f} (R2 {r.r_squared:.3f}, CI {r.ci_exponent[0]:.3f}..{r.ci_exponent[1]:.3f})"
        )
        if cfg.scale == "paper":
            ok = d.ci_exponent[0] <= 0.13 and d.ci_exponent[1] >= 0.09 and r.ci_exponent[0] <= 0.99 and r.ci_exponent[1] >= 0.93
        else:
            ok = (
                0.04 <= d.exponent <= 0.25 and 0.6 <= r.exponent <= 1.2
                and min(d.r_squared, r.r_squared) >= 0.85 and r.exponent > d.exponent
            )
        return ok, detail

    return _timed(5, f"scaling exponents ({cfg.scale})", 900.0 if cfg.scale == "desk" else None, body)


def allocation_statistics(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        rows = [lqg_allocation_instance(s, cfg.allocate.lqg) for s in range(30)]
        kept = [r for r in rows if not r["boundary_excluded"]]
        ells = [r["ell"] for r in kept]
        n_pos = sum(e > 0 for e in ells)
        p = sign_test_one_sided(n_pos, len(ells))
        kr = [r["K_lip"] / r["K_prime"] for r in kept]
        ok = len(kept) == 30 and n_pos == 30 and p == 0.5**30 and min(kr) >= 1.0
        return ok, (
            f"{len(kept)}/30 kept, {n_pos} positive ell (median {median(ells):.3f}), sign-test p {p:.3e}, "
            f"K_lip/K' in [{min(kr):.3f}, {max(kr):.3f}]"
        )

    return _timed(6, "allocation statistics", None, body)


def reinforce_unbiased(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        r = cfg.reinforce
        env, policy = pg.make_pg_env(r.env_seed, r.state_dim, r.action_dim)
        reps = pg.unbiasedness_grid(env, policy, r.sigma2_grid, r.unbiased_K_grid, r.horizon, r.gamma, 10_000, cfg.seed)
        zmax = max(float(u.z.max()) for u in reps)
        return all(u.holds for u in reps), f"{len(reps)} grid points, max |z| {zmax:.2f} vs threshold {reps[0].threshold:.2f}"

    return _timed(7, "REINFORCE unbiasedness", 300.0, body)


def reinforce_variance(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        r = cfg.reinforce
        grid = inflation_grid(r, cfg.seed)
        bad = [g for g in grid if not g.holds]
        worst = max(g.inflation / g.cap for g in grid if g.cap > 0)
        env, policy = pg.make_pg_env(r.env_seed, r.state_dim, r.action_dim)
        halves = [pg.variance_halving_check(env, policy, K, r.horizon, r.gamma, 1.0, r.reps, cfg.seed) for K in (2, 8)]
        ok = not bad and all(h.holds for h in halves)
        ratios = ", ".join(f"{h.ratio:.3f} [{h.ci[0]:.3f},{h.ci[1]:.3f}]" for h in halves)
        return ok, f"{len(grid) - len(bad)}/{len(grid)} grid points under cap (max inflation/cap {worst:.3f}); 2K/K ratios {ratios}"

    return _timed(8, "REINFORCE variance cap", None, body)


def fidelity_regimes(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        checks = []
        for p, want in ((0.5, "lo"), (1.0, "all"), (2.0, "hi")):
            res = pg.argmin_phi(pg.FidelityCurve("power_law", {"a": 1.0, "p": p}), (0.1, 10.0))
            got = "all" if res.all_tie else ("lo" if res.ties == (0.1,) else "hi" if res.ties == (10.0,) else "other")
            checks.append((f"p={p}", got == want))
        bounded = pg.FidelityCurve("bounded", {"sigma0_sq": 1.0, "c_max": 2.0})
        res = pg.argmin_phi(bounded, (0.0, 2.0))
        grid = np.linspace(0.0, 2.0, 201)
        peak = grid[1:][np.argmax([bounded.phi(c) for c in grid[1:]])]
        checks.append(("bounded", res.ties == (0.0, 2.0) and peak == 1.0))
        res = pg.argmin_phi(pg.FidelityCurve("floor", {"sigma_floor_sq": 0.25, "a": 1.0}), (0.0, 10.0))
        checks.append(("floor", res.ties == (0.0,)))
        return all(ok for _, ok in checks), ", ".join(f"{n} {'ok' if ok else 'MISMATCH'}" for n, ok in checks)

    return _timed(9, "fidelity regimes", None, body)


def bias_decomposition(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        reports = bias_reports(cfg.reinforce, cfg.seed)
        ok = all(b.holds for reps in reports.values() for b in reps)
        parts = []
        for name, reps in reports.items():
            for i in range(len(reps)):
                for j in range(i + 1, len(reps)):
                    a, b = reps[i], reps[j]
                    ok &= abs(a.excess - b.excess) <= 1.96 * math.hypot(a.excess_se, b.excess_se)
            parts.append(f"{name} excess " + "/".join(f"{b.excess:.3g}" for b in reps))
        return ok, "; ".join(parts)

    return _timed(10, "bias MSE decomposition", None, body)


def _mlp_gradcheck(seed: int) -> float:
    rng = make_rng("gradcheck", seed)
    net = StudentMlp.init(rng, 5, 3, 7)
    x, y = rng.standard_normal((11, 5)), rng.standard_normal((11, 3))
    _, grads = net.loss_and_grads(x, y)
    worst, h = 0.0, 1e-6
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp, _ = net.loss_and_grads(x, y)
            p[idx] = old - h
            lm, _ = net.loss_and_grads(x, y)
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(1e-8, abs(fd) + abs(g[idx])))
    return worst


def _adam_reference_gap(seed: int) -> float:
    rng = make_rng("adam-ref", seed)
    p = rng.standard_normal(6)
    grads = rng.standard_normal((25, 6))
    q = [p.copy()]
    opt = Adam(q)
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    ref = p.tolist()
    m = [0.0] * 6
    v = [0.0] * 6
    for t, g in enumerate(grads, start=1):
        opt.step(q, [g])
        for i in range(6):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh, vh = m[i] / (1 - b1**t), v[i] / (1 - b2**t)
            ref[i] -= lr * mh / (math.sqrt(vh) + eps)
    return float(np.max(np.abs(q[0] - np.array(ref))))


def numerical_hygiene(cfg: ExperimentConfig) -> CriterionResult:
    def body():
        grad = _mlp_gradcheck(cfg.seed)
        adam = _adam_reference_gap(cfg.seed)
        ns = [100, 300, 1000, 3000]
        law = fit_power_law(ns, [[0.7 * n**-0.4] * 3 for n in ns], 200, cfg.seed)
        fit_gap = max(abs(law.amplitude - 0.7) / 0.7, abs(law.exponent - 0.4))
        with tempfile.TemporaryDirectory() as tmp:
            small = replace(cfg, calibrate=replace(cfg.calibrate, n_synthetic=20, n_lqg=20))
            run_calibrate(small, Path(tmp, "a"))
            run_calibrate(small, Path(tmp, "b"))
            names = ["calibrate.csv", "calibrate_ecdf.csv"]
            same = all(filecmp.cmp(Path(tmp, "a", n), Path(tmp, "b", n), shallow=False) for n in names)
        env, policy = pg.make_pg_env(0)
        e1 = pg.reinforce_estimate(env, policy, 16, 5, 0.9, 1.0, seed=3)
        e2 = pg.reinforce_estimate(env, policy, 16, 5, 0.9, 1.0, seed=3)
        same &= bool(np.array_equal(e1.mean, e2.mean))
        ok = grad <= 1e-4 and adam <= 1e-12 and fit_gap <= 1e-12 and same
        return ok, f"backprop rel err {grad:.1e}, Adam gap {adam:.1e}, noise-free fit gap {fit_gap:.1e}, reproducible {same}"

    return _timed(11, "numerical hygiene", None, body)


CRITERIA: tuple[Callable[[ExperimentConfig], CriterionResult], ...] = (
    bound_soundness,
    coefficient_monotonicity,
    straightening,
    oracle_equivalence,
    scaling_exponents,
    allocation_statistics,
    reinforce_unbiased,
    reinforce_variance,
    fidelity_regimes,
    bias_decomposition,
    numerical_hygiene,
)


def run_acceptance(
    cfg: Optional[ExperimentConfig] = None,
    only: Optional[set[int]] = None,
    echo: Callable[[str], None] = print,
) -> list[CriterionResult]:
    cfg = cfg or load_config(environ={})
    results = []
    for i, crit in enumerate(CRITERIA, start=1):
        if only and i not in only:
            continue
        res = crit(cfg)
        echo(res.line())
        results.append(res)
    return results
