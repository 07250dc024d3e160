"""Finite-horizon REINFORCE under noisy and biased rewards, and the
reward-fidelity tradeoff ``Phi(c) = c * sigma^2(c)``.

Trajectories are simulated in vectorized batches.  A noisy estimator and
its noise-free twin are computed on the same trajectory stream (common
random numbers), so their difference isolates the noise term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .mdp import Array, MdpSpec, make_synthetic_mdp, sample_ball
from .rng import make_rng

RewardFn = Callable[[Array, Array], Array]


@dataclass(frozen=True)
class DifferentiablePolicy:
    """Gaussian policy ``a ~ N(theta s, sigma^2 I)`` with ``theta`` of shape
    ``(action_dim, state_dim)``."""

    theta: Array
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if np.ndim(self.theta) != 2:
            raise ValueError("theta must be a matrix")

    @property
    def n_params(self) -> int:
        return int(np.size(self.theta))

    def mean(self, s: Array) -> Array:
        return s @ self.theta.T

    def sample(self, s: Array, rng: np.random.Generator) -> Array:
        mu = self.mean(s)
        return mu + self.sigma * rng.standard_normal(mu.shape)

    def log_prob(self, s: Array, a: Array, theta: Optional[Array] = None) -> Array:
        th = self.theta if theta is None else theta
        z = (a - s @ th.T) / self.sigma
        d = z.shape[-1]
        return -0.5 * (z**2).sum(-1) - d * math.log(self.sigma) - 0.5 * d * math.log(2 * math.pi)

    def score(self, s: Array, a: Array) -> Array:
        """``grad_theta log pi(a|s)``, flattened row-major."""
        u = (a - self.mean(s)) / self.sigma**2
        return (u[..., :, None] * s[..., None, :]).reshape(*u.shape[:-1], -1)


@dataclass(frozen=True)
class PgEnv:
    """True dynamics and reward of an MDP plus the initial-state law
    ``s0 ~ Uniform(ball(center, radius))``."""

    mdp: MdpSpec
    s0_center: Array
    s0_radius: float = 1.0

    @property
    def state_dim(self) -> int:
        return self.mdp.state_dim

    def initial_states(self, rng: np.random.Generator, n: int) -> Array:
        return self.s0_center + sample_ball(rng, n, self.state_dim, self.s0_radius)


@dataclass(frozen=True)
class LinearReward:
    """``r(s, a) = w_s . s + w_a . a``."""

    w_s: Array
    w_a: Array

    def __call__(self, s: Array, a: Array) -> Array:
        return s @ self.w_s + a @ self.w_a


@dataclass(frozen=True)
class ConstantBias:
    value: float

    def __call__(self, s: Array, a: Array) -> Array:
        return np.full(s.shape[:-1], float(self.value))


@dataclass(frozen=True)
class ActionNormBias:
    """``b(s, a) = scale * ||a||^2``."""

    scale: float = 1.0

    def __call__(self, s: Array, a: Array) -> Array:
        return self.scale * (a**2).sum(-1)


def make_pg_env(seed: int = 0, state_dim: int = 3, action_dim: int = 2) -> tuple[PgEnv, DifferentiablePolicy]:
    """Squashed-linear MDP with a bounded reward and a small random policy."""
    mdp, _ = make_synthetic_mdp(seed, state_dim, action_dim, 0.9, (0.6, 1.0, 0.5))
    rng = make_rng("pg-env", seed, state_dim, action_dim)
    center = 0.5 * rng.standard_normal(state_dim)
    policy = DifferentiablePolicy(0.3 * rng.standard_normal((action_dim, state_dim)), 0.5)
    return PgEnv(mdp, center, 0.5), policy


def reward_to_go(r: Array, gamma: float) -> Array:
    """``G_t = sum_{t' >= t} gamma^(t'-t) r_t'`` along the last axis."""
    out = np.empty_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        out[..., t] = acc
    return out


@dataclass(frozen=True)
class TrajectoryTerms:
    """Per-trajectory single-rollout estimators.

    ``clean`` uses the true reward (plus bias when given); ``noise`` is the
    additive contribution of the reward noise at unit standard deviation,
    so the noisy estimator is ``clean + sqrt(sigma2) * noise``.
    """

    clean: Array
    noise: Array
    max_score2: Array
    extra_noise: tuple[Array, ...] = ()

    def noisy(self, noise_sigma2: float, draw: int = 0) -> Array:
        """Noisy estimator using independent noise draw number ``draw``."""
        eta = self.noise if draw == 0 else self.extra_noise[draw - 1]
        return self.clean + math.sqrt(noise_sigma2) * eta


def simulate_terms(
    env: PgEnv,
    policy: DifferentiablePolicy,
    n: int,
    horizon: int,
    gamma: float,
    rng: np.random.Generator,
    bias: Optional[RewardFn] = None,
    reward: Optional[RewardFn] = None,
    noise: str = "gaussian",
    chunk: int = 20_000,
    noise_draws: int = 1,
) -> TrajectoryTerms:
    """Roll out ``n`` independent trajectories of length ``horizon``.

    ``noise_draws`` independent reward-noise sequences are drawn per
    trajectory, all sharing the same states and actions.
    """
    if horizon < 1 or n < 1 or noise_draws < 1:
        raise ValueError("need n >= 1 and horizon >= 1")
    if noise not in ("gaussian", "uniform"):
        raise ValueError(f"unknown noise law {noise!r}")
    reward = reward or env.mdp.reward
    cleans, maxes = [], []
    noises = [[] for _ in range(noise_draws)]
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        s = env.initial_states(rng, m)
        scores = np.empty((m, horizon, policy.n_params))
        rew = np.empty((m, horizon))
        for t in range(horizon):
            a = policy.sample(s, rng)
            scores[:, t] = policy.score(s, a)
            rew[:, t] = reward(s, a) + (bias(s, a) if bias is not None else 0.0)
            s = env.mdp.dynamics(s, a)
        for d in range(noise_draws):
            if noise == "gaussian":
                eta = rng.standard_normal((m, horizon))
            else:
                eta = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), (m, horizon))
            noises[d].append(np.einsum("mtp,mt->mp", scores, reward_to_go(eta, gamma)))
        cleans.append(np.einsum("mtp,mt->mp", scores, reward_to_go(rew, gamma)))
        maxes.append((scores**2).sum(-1).max(axis=1))
    stacked = [np.concatenate(x) for x in noises]
    return TrajectoryTerms(np.concatenate(cleans), stacked[0], np.concatenate(maxes), tuple(stacked[1:]))


def scalar_variance(x: Array) -> float:
    """Sum of coordinate sample variances of the rows of ``x``."""
    if len(x) < 2:
        return 0.0
    return float(x.var(axis=0, ddof=1).sum())


@dataclass(frozen=True)
class GradientEstimate:
    mean: Array
    scalar_var: float
    K: int
    H: int
    gamma: float
    noise_sigma2: float
    W_H2_hat: float


def reinforce_estimate(
    env: PgEnv,
    policy: DifferentiablePolicy,
    K: int,
    H: int,
    gamma: float,
    noise_sigma2: float = 0.0,
    bias: Optional[RewardFn] = None,
    seed: int = 0,
    noise: str = "gaussian",
) -> GradientEstimate:
    """Averaged REINFORCE estimate from ``K`` trajectories.

    ``scalar_var`` estimates the variance of the averaged estimator,
    i.e. the single-trajectory scalar variance divided by ``K``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if noise_sigma2 < 0:
        raise ValueError("noise variance must be non-negative")
    terms = simulate_terms(env, policy, K, H, gamma, make_rng("reinforce", seed, K, H), bias, noise=noise)
    g = terms.noisy(noise_sigma2)
    return GradientEstimate(
        mean=g.mean(axis=0),
        scalar_var=scalar_variance(g) / K,
        K=K,
        H=H,
        gamma=gamma,
        noise_sigma2=noise_sigma2,
        W_H2_hat=float(terms.max_score2.mean()),
    )


def noise_cap(noise_sigma2: float, H: int, w_h2: float, K: int, gamma: float) -> float:
    """Excess-variance cap ``sigma^2 H W_H^2 / (K (1-gamma)^2)``."""
    return noise_sigma2 * H * w_h2 / (K * (1.0 - gamma) ** 2)


def single_step_inflation(policy: DifferentiablePolicy, env: PgEnv, noise_sigma2: float, K: int) -> float:
    """Exact excess variance for ``H = 1``: ``sigma_eta^2 E||score||^2 / K``.

    With ``a - mu = sigma z`` the score norm squared is ``||z||^2 ||s||^2 /
    sigma^2``; ``E||z||^2 = d_a`` and, for ``s0`` uniform on a ball,
    ``E||s||^2 = ||c||^2 + r^2 d / (d + 2)``.
    """
    d, da = env.state_dim, policy.theta.shape[0]
    es2 = float(env.s0_center @ env.s0_center) + env.s0_radius**2 * d / (d + 2)
    return noise_sigma2 * da * es2 / (policy.sigma**2 * K)


def _averaged(x: Array, reps: int, K: int) -> Array:
    return x.reshape(reps, K, -1).mean(axis=1)


@dataclass(frozen=True)
class InflationReport:
    K: int
    H: int
    gamma: float
    sigma2: float
    var_clean: float
    var_noisy: float
    inflation: float
    ci_lo: float
    ci_hi: float
    cap: float
    w_h2_hat: float
    w_h2_ci: tuple[float, float]

    @property
    def holds(self) -> bool:
        """Point inflation, less half its CI width, does not exceed the cap."""
        return self.inflation - 0.5 * (self.ci_hi - self.ci_lo) <= self.cap

    def row(self) -> dict:
        return dict(
            K=self.K, H=self.H, gamma=self.gamma, sigma2=self.sigma2,
            var_clean=self.var_clean, var_noisy=self.var_noisy, cap=self.cap,
            inflation=self.inflation, ci_lo=self.ci_lo, ci_hi=self.ci_hi,
        )


def _bootstrap_rows(rng: np.random.Generator, n: int, resamples: int) -> Array:
    return rng.integers(0, n, size=(resamples, n))


def variance_inflation_check(
    env: PgEnv,
    policy: DifferentiablePolicy,
    K: int,
    H: int,
    gamma: float,
    noise_sigma2: float,
    reps: int = 2_000,
    seed: int = 0,
    resamples: int = 1_000,
    noise: str = "gaussian",
    terms: Optional[TrajectoryTerms] = None,
) -> InflationReport:
    """Variance of the averaged estimator with and without reward noise.

    Both variances come from the same ``reps`` replicate estimators; the
    CI on their difference is a paired percentile bootstrap over replicates.
    """
    if terms is None:
        rng = make_rng("inflation", seed, K, H)
        terms = simulate_terms(env, policy, reps * K, H, gamma, rng, noise=noise)
    clean = _averaged(terms.clean, reps, K)
    noisy = _averaged(terms.noisy(noise_sigma2), reps, K)
    v_clean, v_noisy = scalar_variance(clean), scalar_variance(noisy)
    idx = _bootstrap_rows(make_rng("inflation-boot", seed, K, H), reps, resamples)
    diffs = np.array([scalar_variance(noisy[i]) - scalar_variance(clean[i]) for i in idx])
    lo, hi = np.percentile(diffs, [2.5, 97.5])
    w = terms.max_score2[: reps * K]
    w_hat = float(w.mean())
    w_se = float(w.std(ddof=1) / math.sqrt(len(w)))
    return InflationReport(
        K=K, H=H, gamma=gamma, sigma2=noise_sigma2,
        var_clean=v_clean, var_noisy=v_noisy, inflation=v_noisy - v_clean,
        ci_lo=float(lo), ci_hi=float(hi),
        cap=noise_cap(noise_sigma2, H, w_hat, K, gamma),
        w_h2_hat=w_hat, w_h2_ci=(w_hat - 1.96 * w_se, w_hat + 1.96 * w_se),
    )


@dataclass(frozen=True)
class HalvingReport:
    var_k: float
    var_2k: float
    ratio: float
    ci: tuple[float, float]

    @property
    def holds(self) -> bool:
        return self.ci[0] <= 0.5 <= self.ci[1]


def variance_halving_check(
    env: PgEnv,
    policy: DifferentiablePolicy,
    K: int,
    H: int,
    gamma: float,
    noise_sigma2: float,
    reps: int = 2_000,
    seed: int = 0,
    resamples: int = 1_000,
) -> HalvingReport:
    """Ratio of averaged-estimator variances at ``2K`` and ``K`` with a
    bootstrap CI from two independent replicate sets."""
    rng = make_rng("halving", seed, K, H)
    a = _averaged(simulate_terms(env, policy, reps * K, H, gamma, rng).noisy(noise_sigma2), reps, K)
    b = _averaged(simulate_terms(env, policy, reps * 2 * K, H, gamma, rng).noisy(noise_sigma2), reps, 2 * K)
    ia = _bootstrap_rows(rng, reps, resamples)
    ib = _bootstrap_rows(rng, reps, resamples)
    ratios = np.array([scalar_variance(b[j]) / scalar_variance(a[i]) for i, j in zip(ia, ib)])
    lo, hi = np.percentile(ratios, [2.5, 97.5])
    va, vb = scalar_variance(a), scalar_variance(b)
    return HalvingReport(va, vb, vb / va, (float(lo), float(hi)))


@dataclass(frozen=True)
class UnbiasednessReport:
    K: int
    sigma2: float
    mean_diff: Array
    se: Array
    threshold: float

    @property
    def z(self) -> Array:
        return np.abs(self.mean_diff) / np.where(self.se > 0, self.se, np.inf)

    @property
    def holds(self) -> bool:
        return bool((self.z <= self.threshold).all())


def bonferroni_threshold(m: int, alpha: float = 0.05, floor: float = 3.0) -> float:
    """Two-sided Bonferroni z threshold for ``m`` tests, at least ``floor``."""
    return max(floor, float(norm.ppf(1.0 - alpha / (2 * m))))


def unbiasedness_grid(
    env: PgEnv,
    policy: DifferentiablePolicy,
    sigma2_grid=(0.1, 1.0, 4.0),
    K_grid=(1, 4, 16),
    H: int = 10,
    gamma: float = 0.9,
    reps: int = 10_000,
    seed: int = 0,
) -> list[UnbiasednessReport]:
    """Per-coordinate z-tests of noisy-minus-clean replicate means."""
    m = len(sigma2_grid) * len(K_grid) * policy.n_params
    thr = bonferroni_threshold(m)
    out = []
    for K in K_grid:
        rng = make_rng("unbiased", seed, K, H)
        terms = simulate_terms(env, policy, reps * K, H, gamma, rng, noise_draws=len(sigma2_grid))
        clean = _averaged(terms.clean, reps, K)
        for j, s2 in enumerate(sigma2_grid):
            d = _averaged(terms.noisy(s2, j), reps, K) - clean
            out.append(UnbiasednessReport(K, s2, d.mean(axis=0), d.std(axis=0, ddof=1) / math.sqrt(reps), thr))
    return out


# ---------------------------------------------------------------------------
# biased rewards


@dataclass(frozen=True)
class BiasMseReport:
    K: int
    mse: float
    mse_se: float
    var_single: float
    var_single_se: float
    bias_grad_sq: float
    bias_grad_sq_se: float

    @property
    def predicted(self) -> float:
        return self.var_single / self.K + self.bias_grad_sq

    @property
    def predicted_se(self) -> float:
        return math.hypot(self.var_single_se / self.K, self.bias_grad_sq_se)

    @property
    def excess(self) -> float:
        return self.mse - self.var_single / self.K

    @property
    def excess_se(self) -> float:
        return math.hypot(self.mse_se, self.var_single_se / self.K)

    @property
    def holds(self) -> bool:
        return abs(self.mse - self.predicted) <= 1.96 * math.hypot(self.mse_se, self.predicted_se)


def reference_gradient(
    env: PgEnv, policy: DifferentiablePolicy, H: int, gamma: float, n: int = 100_000, seed: int = 0
) -> tuple[Array, float]:
    """Noise-free REINFORCE average over ``n`` rollouts and its scalar
    variance (of the average)."""
    t = simulate_terms(env, policy, n, H, gamma, make_rng("g-ref", seed, H))
    return t.clean.mean(axis=0), scalar_variance(t.clean) / n


def bias_mse_decomposition(
    env: PgEnv,
    policy: DifferentiablePolicy,
    K: int,
    H: int,
    gamma: float,
    bias: Optional[RewardFn],
    reps: int = 2_000,
    seed: int = 0,
    reference: Optional[tuple[Array, float]] = None,
    bias_rollouts: int = 100_000,
) -> BiasMseReport:
    """Both sides of the biased-reward MSE identity, estimated independently.

    Left: mean of ``||g_tilde - g_ref||^2`` over replicates, less the
    reference's own variance (the two are independent).  Right: the
    single-trajectory scalar variance over ``K`` plus an unbiased
    split-sample estimate of ``||grad B_H||^2`` from REINFORCE run on the
    bias alone.
    """
    g_ref, ref_var = reference or reference_gradient(env, policy, H, gamma, seed=seed)
    rng = make_rng("bias-mse", seed, K, H)
    biased = simulate_terms(env, policy, reps * K, H, gamma, rng, bias=bias).clean
    sq = ((_averaged(biased, reps, K) - g_ref) ** 2).sum(-1)
    mse, mse_se = float(sq.mean() - ref_var), float(sq.std(ddof=1) / math.sqrt(reps))

    single = simulate_terms(env, policy, reps * K, H, gamma, rng, bias=bias).clean
    dev = ((single - single.mean(axis=0)) ** 2).sum(-1)
    n1 = len(single)
    var1 = float(dev.sum() / (n1 - 1))
    var1_se = float(dev.std(ddof=1) / math.sqrt(n1))

    if bias is None:
        bg, bg_se = 0.0, 0.0
    else:
        half = bias_rollouts // 2
        gb = simulate_terms(env, policy, 2 * half, H, gamma, rng, reward=bias).clean
        a, b = gb[:half], gb[half:]
        prod = (a * b).sum(-1)  # E[<a_i, b_i>] = ||grad B||^2 for independent a_i, b_i
        bg = float(prod.mean())
        bg_se = float(prod.std(ddof=1) / math.sqrt(half))
    return BiasMseReport(K, mse, mse_se, var1, var1_se, bg, bg_se)


# ---------------------------------------------------------------------------
# reward fidelity


REGIMES = ("power_law", "bounded", "floor")


@dataclass(frozen=True)
class FidelityCurve:
    """Noise variance as a function of per-rollout annotation cost.

    ``power_law``: ``sigma^2 = a c^-p`` (params ``a, p``);
    ``bounded``: ``sigma0^2 (1 - c/c_max)`` on ``(0, c_max]``;
    ``floor``: ``sigma_floor^2 + a / c``.
    """

    regime: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        need = {"power_law": {"a", "p"}, "bounded": {"sigma0_sq", "c_max"}, "floor": {"sigma_floor_sq", "a"}}
        if self.regime not in need:
            raise ValueError(f"unknown regime {self.regime!r}")
        if set(self.params) != need[self.regime]:
            raise ValueError(f"{self.regime} needs parameters {sorted(need[self.regime])}")
        if any(v <= 0 for v in self.params.values()):
            raise ValueError("fidelity parameters must be positive")

    @property
    def c_max(self) -> float:
        return self.params["c_max"] if self.regime == "bounded" else math.inf

    def _check(self, c: float) -> None:
        if not 0 < c <= self.c_max:
            raise ValueError(f"cost {c} outside the domain (0, {self.c_max}]")

    def sigma2(self, c: float) -> float:
        self._check(c)
        p = self.params
        if self.regime == "power_law":
            return p["a"] * c ** (-p["p"])
        if self.regime == "bounded":
            return p["sigma0_sq"] * (1.0 - c / p["c_max"])
        return p["sigma_floor_sq"] + p["a"] / c

    def phi(self, c: float) -> float:
        """``c * sigma^2(c)`` in reduced closed form, so ties are exact."""
        self._check(c)
        p = self.params
        if self.regime == "power_law":
            return p["a"] * c ** (1.0 - p["p"])
        if self.regime == "bounded":
            return p["sigma0_sq"] * c * (1.0 - c / p["c_max"])
        return p["sigma_floor_sq"] * c + p["a"]

    def phi_at_zero(self) -> float:
        """Right limit of ``Phi`` at ``c = 0``."""
        p = self.params
        if self.regime == "power_law":
            if p["p"] < 1.0:
                return 0.0
            return p["a"] if p["p"] == 1.0 else math.inf
        if self.regime == "bounded":
            return 0.0
        return p["a"]


def phi(curve: FidelityCurve, c: float) -> float:
    return curve.phi(c)


@dataclass(frozen=True)
class ArgminResult:
    c_star: float
    phi_star: float
    ties: tuple[float, ...]
    grid: Array
    values: Array

    @property
    def all_tie(self) -> bool:
        return len(self.ties) == len(self.grid)


def argmin_phi(curve: FidelityCurve, c_range: tuple[float, float], grid: int = 1_001) -> ArgminResult:
    """Minimize ``Phi`` over a log-spaced grid on ``c_range``.

    A lower end of 0 is represented by the right limit of ``Phi`` there,
    with the remaining points spanning six decades below the upper end.
    Every grid point attaining the minimum exactly is reported as a tie.
    """
    lo, hi = map(float, c_range)
    if not 0 <= lo < hi or hi > curve.c_max or grid < 2:
        raise ValueError(f"invalid cost range {c_range} for this curve")
    if lo == 0.0:
        cs = np.concatenate([[0.0], np.logspace(math.log10(hi) - 6, math.log10(hi), grid - 1)])
        vals = np.array([curve.phi_at_zero()] + [curve.phi(c) for c in cs[1:]])
    else:
        cs = np.logspace(math.log10(lo), math.log10(hi), grid)
        cs[0], cs[-1] = lo, hi
        vals = np.array([curve.phi(c) for c in cs])
    best = vals.min()
    ties = tuple(float(c) for c in cs[vals == best])
    return ArgminResult(ties[0], float(best), ties, cs, vals)


def fidelity_table(curve: FidelityCurve, c_values) -> list[dict]:
    """Plot data rows ``(c, sigma2, phi)``; ``c = 0`` uses right limits."""
    rows = []
    for c in c_values:
        c = float(c)
        if c == 0.0:
            s2 = {"power_law": math.inf, "bounded": curve.params.get("sigma0_sq", 0.0), "floor": math.inf}[curve.regime]
            rows.append({"regime": curve.regime, "c": 0.0, "sigma2": s2, "phi": curve.phi_at_zero()})
        else:
            rows.append({"regime": curve.regime, "c": c, "sigma2": curve.sigma2(c), "phi": curve.phi(c)})
    return rows
