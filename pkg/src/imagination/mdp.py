"""Deterministic MDP families with analytic Lipschitz constants.

Lipschitz constants are taken with respect to the sum metric
``||s - s'|| + ||a - a'||`` on state-action pairs.  For a map that is linear in
``(s, a)`` with blocks ``W_s, W_a`` that constant is ``max(||W_s||, ||W_a||)``
(spectral norms), and composing with a componentwise 1-Lipschitz squash
cannot increase it.

All maps are small callable classes (not closures) so that MDPs can be sent
to worker processes.  They accept leading batch dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import make_rng

Array = np.ndarray


class DomainExitError(RuntimeError):
    """A rollout left the operating domain on which the reward bound holds."""


def spectral_norm(m: Array) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if not m.size:
        return 0.0
    return float(np.linalg.norm(m, 2))


def _scale_to_norm(m: Array, target: float) -> Array:
    n = spectral_norm(m)
    if target == 0.0 or n == 0.0:
        return np.zeros_like(m)
    return m * (target / n)


def _scale_blocks(ms: Array, ma: Array, target: float) -> tuple[Array, Array]:
    # joint scaling keeps the ratio of the blocks and makes max(||ms||, ||ma||) == target
    n = max(spectral_norm(ms), spectral_norm(ma))
    if target == 0.0 or n == 0.0:
        return np.zeros_like(ms), np.zeros_like(ma)
    return ms * (target / n), ma * (target / n)


# ---------------------------------------------------------------------------
# maps


@dataclass(frozen=True)
class SquashedLinearDynamics:
    """``s' = tanh(W_s s + W_a a + b)``."""

    w_s: Array
    w_a: Array
    b: Array

    def __call__(self, s: Array, a: Array) -> Array:
        return np.tanh(s @ self.w_s.T + a @ self.w_a.T + self.b)

    @property
    def lipschitz(self) -> float:
        return max(spectral_norm(self.w_s), spectral_norm(self.w_a))


@dataclass(frozen=True)
class SquashedLinearReward:
    """``r = scale * tanh(w_s.s + w_a.a + b)``."""

    w_s: Array
    w_a: Array
    b: float
    scale: float

    def __call__(self, s: Array, a: Array) -> Array:
        return self.scale * np.tanh(s @ self.w_s + a @ self.w_a + self.b)

    @property
    def lipschitz(self) -> float:
        return abs(self.scale) * max(float(np.linalg.norm(self.w_s)), float(np.linalg.norm(self.w_a)))


@dataclass(frozen=True)
class LinearDynamics:
    """``s' = A s + B a``."""

    a_mat: Array
    b_mat: Array

    def __call__(self, s: Array, a: Array) -> Array:
        return s @ self.a_mat.T + a @ self.b_mat.T

    @property
    def lipschitz(self) -> float:
        return max(spectral_norm(self.a_mat), spectral_norm(self.b_mat))


@dataclass(frozen=True)
class QuadraticReward:
    """``r = -(s'Qs + a'Ra)``; Lipschitz only on bounded domains."""

    q: Array
    r: Array

    def __call__(self, s: Array, a: Array) -> Array:
        return -(np.einsum("...i,ij,...j->...", s, self.q, s) + np.einsum("...i,ij,...j->...", a, self.r, a))

    def local_lipschitz(self, radius: float) -> float:
        # gradient is (-2Qs, -2Ra); the dual of the sum metric is the max of the block norms
        return 2.0 * radius * max(spectral_norm(self.q), spectral_norm(self.r))

    def bound(self, radius: float) -> float:
        return radius**2 * (spectral_norm(self.q) + spectral_norm(self.r))


@dataclass(frozen=True)
class ConstantMap:
    value: Array

    def __call__(self, s: Array, a: Array) -> Array:
        shape = np.broadcast_shapes(s.shape[:-1], a.shape[:-1])
        return np.broadcast_to(self.value, shape + np.shape(self.value)).copy()


@dataclass(frozen=True)
class UnitEnvelope:
    """Random squashed map with ``||g(s, a)|| <= 1`` everywhere.

    Vector case: ``tanh(G_s s + G_a a + c) / sqrt(d)``; scalar case
    (``out_dim == 0``): ``tanh(g_s.s + g_a.a + c)``.
    """

    g_s: Array
    g_a: Array
    c: Array
    out_dim: int

    def __call__(self, s: Array, a: Array) -> Array:
        if self.out_dim == 0:
            return np.tanh(s @ self.g_s + a @ self.g_a + self.c)
        return np.tanh(s @ self.g_s.T + a @ self.g_a.T + self.c) / math.sqrt(self.out_dim)

    @property
    def lipschitz(self) -> float:
        if self.out_dim == 0:
            return max(float(np.linalg.norm(self.g_s)), float(np.linalg.norm(self.g_a)))
        return max(spectral_norm(self.g_s), spectral_norm(self.g_a)) / math.sqrt(self.out_dim)


@dataclass(frozen=True)
class Shifted:
    """``base(s, a) + eps * direction(s, a)``."""

    base: Callable
    direction: Callable
    eps: float

    def __call__(self, s: Array, a: Array) -> Array:
        return self.base(s, a) + self.eps * self.direction(s, a)


@dataclass(frozen=True)
class TanhLinearPolicy:
    """``pi(s) = tanh(P s)``, Lipschitz constant ``||P||``."""

    p: Array

    def __call__(self, s: Array) -> Array:
        return np.tanh(s @ self.p.T)


@dataclass(frozen=True)
class LinearPolicy:
    """``pi(s) = -K s``."""

    k: Array

    def __call__(self, s: Array) -> Array:
        return -(s @ self.k.T)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class MdpSpec:
    state_dim: int
    action_dim: int
    dynamics: Callable[[Array, Array], Array]
    reward: Callable[[Array, Array], Array]
    gamma: float
    lip_f: float
    lip_r: float
    reward_bound: float
    reward_domain_radius: Optional[float] = None
    tag: str = "synthetic"

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.lip_f < 0 or self.lip_r < 0:
            raise ValueError("Lipschitz constants must be non-negative")
        if self.reward_domain_radius is not None and self.reward_domain_radius <= 0:
            raise ValueError("reward_domain_radius must be positive")


@dataclass(frozen=True)
class PolicySpec:
    action_map: Callable[[Array], Array]
    lip_pi: float

    def __call__(self, s: Array) -> Array:
        return self.action_map(s)


@dataclass(frozen=True)
class Trajectory:
    states: Array
    actions: Array
    rewards: Array

    @property
    def horizon(self) -> int:
        return len(self.rewards)

    def __post_init__(self):
        if not len(self.states) == len(self.actions) == len(self.rewards):
            raise ValueError("states, actions and rewards must have equal length")


@dataclass(frozen=True)
class PerturbedPair:
    true_mdp: MdpSpec
    hat_mdp: MdpSpec
    eps_dyn: float
    eps_rew: float
    dyn_direction: Callable = field(repr=False)
    rew_direction: Callable = field(repr=False)


def contraction(gamma: float, lip_f: float, lip_pi: float) -> float:
    return gamma * lip_f * (1.0 + lip_pi)


# ---------------------------------------------------------------------------
# constructors


def make_synthetic_mdp(
    seed: int,
    state_dim: int,
    action_dim: int,
    gamma: float,
    lip_targets: tuple[float, float, float],
) -> tuple[MdpSpec, PolicySpec]:
    """Globally Lipschitz squashed-linear MDP and policy.

    The returned constants are exactly the construction's spectral-norm
    values, which equal ``lip_targets``.
    """
    lip_f, lip_r, lip_pi = (float(x) for x in lip_targets)
    if min(lip_f, lip_r, lip_pi) < 0:
        raise ValueError("Lipschitz targets must be non-negative")
    if contraction(gamma, lip_f, lip_pi) >= 1.0:
        raise ValueError(
            f"contraction hypothesis violated: gamma*L_f*(1+L_pi) = {contraction(gamma, lip_f, lip_pi):.6g} >= 1"
        )
    rng = make_rng("synthetic-mdp", seed, state_dim, action_dim)
    w_s, w_a = _scale_blocks(
        rng.standard_normal((state_dim, state_dim)), rng.standard_normal((state_dim, action_dim)), lip_f
    )
    dyn = SquashedLinearDynamics(w_s, w_a, 0.5 * rng.standard_normal(state_dim))

    v_s, v_a = rng.standard_normal(state_dim), rng.standard_normal(action_dim)
    unit = max(np.linalg.norm(v_s), np.linalg.norm(v_a))
    rew = SquashedLinearReward(v_s / unit, v_a / unit, float(0.5 * rng.standard_normal()), lip_r)

    pol = TanhLinearPolicy(_scale_to_norm(rng.standard_normal((action_dim, state_dim)), lip_pi))

    mdp = MdpSpec(
        state_dim=state_dim,
        action_dim=action_dim,
        dynamics=dyn,
        reward=rew,
        gamma=float(gamma),
        lip_f=dyn.lipschitz,
        lip_r=rew.lipschitz,
        reward_bound=abs(lip_r),
        tag="synthetic",
    )
    return mdp, PolicySpec(pol, spectral_norm(pol.p))


def _random_psd(rng: np.random.Generator, dim: int, norm: float) -> Array:
    m = rng.standard_normal((dim, dim))
    return _scale_to_norm(m @ m.T, norm)


def make_lqg_mdp(
    seed: int,
    state_dim: int,
    action_dim: int,
    gamma: float,
    domain_radius: float,
    lip_f_band: tuple[float, float] = (0.28, 0.285),
    lip_pi_band: tuple[float, float] = (1.6e-4, 1.0e-3),
    cost_norm_band: tuple[float, float] = (0.41, 0.745),
    control_cost_ratio: float = 0.1,
    gain: str = "random",
    contraction_cap: float = 0.228,
) -> tuple[MdpSpec, PolicySpec]:
    """Linear dynamics with quadratic reward, Lipschitz on a bounded domain.

    The operating domain is ``{||s|| <= R} x {||a|| <= R}`` with
    ``R = domain_radius``; ``lip_r`` is the quadratic form's Lipschitz
    constant there, so it scales linearly with ``R``.  ``gain="lqr"`` uses
    the discounted infinite-horizon LQR gain instead of a small random one.
    A random gain's norm is drawn below the level that would push
    ``gamma * lip_f * (1 + lip_pi)`` past ``contraction_cap`` when that
    cap is reachable at all.
    """
    if domain_radius <= 0:
        raise ValueError(f"domain_radius must be positive, got {domain_radius}")
    rng = make_rng("lqg-mdp", seed, state_dim, action_dim)
    lip_f = rng.uniform(*lip_f_band)
    a_mat, b_mat = _scale_blocks(
        rng.standard_normal((state_dim, state_dim)), rng.standard_normal((state_dim, action_dim)), lip_f
    )
    q_norm = rng.uniform(*cost_norm_band)
    q = _random_psd(rng, state_dim, q_norm)
    r = _random_psd(rng, action_dim, control_cost_ratio * q_norm)
    rew = QuadraticReward(q, r)
    dyn = LinearDynamics(a_mat, b_mat)

    k_dir = rng.standard_normal((action_dim, state_dim))
    if gain == "random":
        hi = lip_pi_band[1]
        room = contraction_cap / (gamma * lip_f) - 1.0
        if room >= 0:
            hi = min(hi, room)
        lo = min(lip_pi_band[0], hi)
        k = _scale_to_norm(k_dir, rng.uniform(lo, hi))
    elif gain == "lqr":
        from scipy.linalg import solve_discrete_are

        # discounting folds into the dynamics: A -> sqrt(gamma) A, B -> sqrt(gamma) B
        ag, bg = math.sqrt(gamma) * a_mat, math.sqrt(gamma) * b_mat
        r_pd = r + 1e-9 * np.eye(action_dim)
        p = solve_discrete_are(ag, bg, q, r_pd)
        k = np.linalg.solve(r_pd + bg.T @ p @ bg, bg.T @ p @ ag)
    else:
        raise ValueError(f"unknown gain {gain!r}")
    lip_pi = spectral_norm(k)
    if contraction(gamma, dyn.lipschitz, lip_pi) >= 1.0:
        raise ValueError("contraction hypothesis violated for this LQG instance")

    mdp = MdpSpec(
        state_dim=state_dim,
        action_dim=action_dim,
        dynamics=dyn,
        reward=rew,
        gamma=float(gamma),
        lip_f=dyn.lipschitz,
        lip_r=rew.local_lipschitz(domain_radius),
        reward_bound=rew.bound(domain_radius),
        reward_domain_radius=float(domain_radius),
        tag="lqg",
    )
    return mdp, PolicySpec(LinearPolicy(k), lip_pi)


def make_linear_tight_mdp(lip_f: float, lip_r: float, lip_pi: float, gamma: float) -> tuple[MdpSpec, PolicySpec]:
    """One-dimensional linear MDP on which the dynamics coefficient is exact.

    ``f(s, a) = L_f (s + a)``, ``r(s, a) = L_r (s + a)``, ``pi(s) = L_pi s``.
    A constant dynamics shift ``h`` moves the return by exactly
    ``h * gamma L_r (1+L_pi) / ((1-gamma)(1-gamma L_f (1+L_pi)))``.
    The reward is unbounded globally; the recorded bound holds for
    ``|s0| <= 1`` under dynamics shifts of size at most 1.
    """
    comp = lip_f * (1.0 + lip_pi)
    if comp >= 1.0:
        raise ValueError("need L_f (1 + L_pi) < 1 so that states stay bounded")
    dyn = LinearDynamics(np.array([[lip_f]]), np.array([[lip_f]]))
    rew = _LinearReward(float(lip_r))
    pol = LinearPolicy(np.array([[-lip_pi]]))
    # |s0| <= 1 and unit-bounded dynamics shifts keep |s_t| <= 1 + 1 / (1 - comp)
    radius = 1.0 + 1.0 / (1.0 - comp)
    mdp = MdpSpec(
        state_dim=1,
        action_dim=1,
        dynamics=dyn,
        reward=rew,
        gamma=float(gamma),
        lip_f=float(lip_f),
        lip_r=float(lip_r),
        reward_bound=lip_r * (1.0 + lip_pi) * radius,
        reward_domain_radius=radius * max(1.0, lip_pi),
        tag="linear",
    )
    return mdp, PolicySpec(pol, float(lip_pi))


@dataclass(frozen=True)
class _LinearReward:
    scale: float

    def __call__(self, s: Array, a: Array) -> Array:
        return self.scale * (s[..., 0] + a[..., 0])


def perturb(mdp: MdpSpec, seed: int, eps_dyn: float, eps_rew: float, kind: str = "random") -> PerturbedPair:
    """Model pair ``f_hat = f + eps_dyn g``, ``r_hat = r + eps_rew h`` with
    ``||g||, |h| <= 1`` by construction.

    ``kind="random"`` uses squashed random envelopes; ``kind="constant"``
    uses a fixed unit direction for ``g`` and ``h = 1``.
    """
    if eps_dyn < 0 or eps_rew < 0:
        raise ValueError("perturbation sizes must be non-negative")
    ds, da = mdp.state_dim, mdp.action_dim
    rng = make_rng("perturb", seed, ds, da)
    if kind == "random":
        g_s, g_a = _scale_blocks(rng.standard_normal((ds, ds)), rng.standard_normal((ds, da)), 1.0)
        g = UnitEnvelope(g_s, g_a, rng.standard_normal(ds), ds)
        h_s, h_a = rng.standard_normal(ds), rng.standard_normal(da)
        unit = max(np.linalg.norm(h_s), np.linalg.norm(h_a))
        h = UnitEnvelope(h_s / unit, h_a / unit, np.asarray(float(rng.standard_normal())), 0)
        lip_g, lip_h = g.lipschitz, h.lipschitz
    elif kind == "constant":
        u = rng.standard_normal(ds)
        g = ConstantMap(u / np.linalg.norm(u))
        h = ConstantMap(np.asarray(1.0))
        lip_g = lip_h = 0.0
    else:
        raise ValueError(f"unknown perturbation kind {kind!r}")

    hat = MdpSpec(
        state_dim=ds,
        action_dim=da,
        dynamics=Shifted(mdp.dynamics, g, float(eps_dyn)),
        reward=Shifted(mdp.reward, h, float(eps_rew)),
        gamma=mdp.gamma,
        lip_f=mdp.lip_f + eps_dyn * lip_g,
        lip_r=mdp.lip_r + eps_rew * lip_h,
        reward_bound=mdp.reward_bound + eps_rew,
        reward_domain_radius=mdp.reward_domain_radius,
        tag=mdp.tag,
    )
    return PerturbedPair(mdp, hat, float(eps_dyn), float(eps_rew), g, h)


def realized_sup(pair: PerturbedPair, rng: np.random.Generator, n: int = 10_000, radius: float = 1.0):
    """Monte-Carlo sup of ``||f_hat - f||`` and ``|r_hat - r|`` over the ball."""
    s = sample_ball(rng, n, pair.true_mdp.state_dim, radius)
    a = sample_ball(rng, n, pair.true_mdp.action_dim, radius)
    df = np.linalg.norm(pair.hat_mdp.dynamics(s, a) - pair.true_mdp.dynamics(s, a), axis=-1)
    dr = np.abs(pair.hat_mdp.reward(s, a) - pair.true_mdp.reward(s, a))
    return float(df.max()), float(dr.max())


def sample_ball(rng: np.random.Generator, n: int, dim: int, radius: float = 1.0) -> Array:
    """Uniform samples from the closed Euclidean ball."""
    x = rng.standard_normal((n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius * rng.uniform(size=(n, 1)) ** (1.0 / dim))


# ---------------------------------------------------------------------------
# rollouts and returns


def rollout(mdp: MdpSpec, policy: PolicySpec, s0: Array, horizon: int) -> Trajectory:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    s = np.asarray(s0, dtype=np.float64)
    states, actions, rewards = [], [], []
    for _ in range(horizon):
        a = policy(s)
        states.append(s)
        actions.append(a)
        rewards.append(float(mdp.reward(s, a)))
        s = mdp.dynamics(s, a)
    return Trajectory(np.array(states), np.array(actions), np.array(rewards))


def discounted_return(traj: Trajectory, gamma: float) -> float:
    return float(np.dot(gamma ** np.arange(traj.horizon), traj.rewards))


def truncation_horizon(gamma: float, reward_bound: float, tol: float) -> int:
    """Smallest ``T >= 1`` with ``gamma^T * R_max / (1 - gamma) < tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if gamma == 0.0 or reward_bound == 0.0:
        return 1
    if not math.isfinite(reward_bound):
        raise ValueError("reward bound must be finite")
    t = max(1, math.ceil(math.log(tol * (1.0 - gamma) / reward_bound) / math.log(gamma)))
    while gamma**t * reward_bound / (1.0 - gamma) >= tol:
        t += 1
    while t > 1 and gamma ** (t - 1) * reward_bound / (1.0 - gamma) < tol:
        t -= 1
    return t


def returns_batch(
    mdp: MdpSpec, policy: PolicySpec, s0: Array, horizon: int, domain_radius: Optional[float] = None
) -> Array:
    """Discounted ``horizon``-step returns for a batch of initial states.

    Raises ``DomainExitError`` if a visited state or action leaves the ball
    of radius ``domain_radius``.
    """
    s = np.atleast_2d(np.asarray(s0, dtype=np.float64))
    total = np.zeros(len(s))
    disc = 1.0
    for _ in range(horizon):
        a = policy(s)
        if domain_radius is not None:
            if (np.linalg.norm(s, axis=-1) > domain_radius).any() or (
                np.linalg.norm(a, axis=-1) > domain_radius
            ).any():
                raise DomainExitError(f"rollout left the operating domain of radius {domain_radius}")
        total += disc * mdp.reward(s, a)
        disc *= mdp.gamma
        s = mdp.dynamics(s, a)
    return total


def truncated_return(mdp: MdpSpec, policy: PolicySpec, s0: Array, tol: float = 1e-9) -> Array | float:
    """Infinite-horizon return to within ``tol`` via the geometric tail bound.

    Accepts a single initial state or a batch of them.
    """
    horizon = truncation_horizon(mdp.gamma, mdp.reward_bound, tol)
    out = returns_batch(mdp, policy, s0, horizon, mdp.reward_domain_radius)
    return float(out[0]) if np.ndim(s0) == 1 else out
