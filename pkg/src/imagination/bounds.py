"""Return-gap bound for a learned dynamics/reward pair, its calibration,
and the temporal-straightening curvature loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mdp import Array, PerturbedPair, PolicySpec, contraction, truncated_return


class InfeasibleContextError(ValueError):
    """``gamma * L_f * (1 + L_pi) >= 1``: the bound does not apply."""


@dataclass(frozen=True)
class LipschitzContext:
    lip_f: float
    lip_r: float
    lip_pi: float
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if min(self.lip_f, self.lip_r, self.lip_pi) < 0:
            raise ValueError("Lipschitz constants must be non-negative")
        if self.contraction >= 1.0:
            raise InfeasibleContextError(
                f"gamma*L_f*(1+L_pi) = {self.contraction:.6g} >= 1; bound undefined"
            )

    @property
    def contraction(self) -> float:
        return contraction(self.gamma, self.lip_f, self.lip_pi)

    @property
    def dyn_multiplier(self) -> float:
        """``gamma L_r (1+L_pi) / (1 - gamma L_f (1+L_pi))``, the Lipschitz factor
        of the optimal sample ratio."""
        return self.gamma * self.lip_r * (1.0 + self.lip_pi) / (1.0 - self.contraction)

    def replace(self, **kw) -> "LipschitzContext":
        d = dict(lip_f=self.lip_f, lip_r=self.lip_r, lip_pi=self.lip_pi, gamma=self.gamma)
        d.update(kw)
        return LipschitzContext(**d)


def dyn_coefficient(ctx: LipschitzContext) -> float:
    """Coefficient of the dynamics error in the return-gap bound."""
    return ctx.dyn_multiplier / (1.0 - ctx.gamma)


def eq1_bound(ctx: LipschitzContext, eps_dyn: float, eps_rew: float) -> float:
    """``eps_rew / (1-gamma) + dyn_coefficient * eps_dyn``."""
    if eps_dyn < 0 or eps_rew < 0:
        raise ValueError("model errors must be non-negative")
    return eps_rew / (1.0 - ctx.gamma) + dyn_coefficient(ctx) * eps_dyn


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    ratio_R: float
    eps_dyn: float
    eps_rew: float
    context: LipschitzContext
    benchmark_tag: str
    excluded: bool = False

    @property
    def holds(self) -> bool:
        return self.ratio_R <= 1.0


def calibrate(pair: PerturbedPair, policy: PolicySpec, s0_set: Array, tol: float = 1e-9) -> BoundReport:
    """Realized return gap against the bound for one model pair.

    The gap is maximized over ``s0_set``.  On domain-restricted MDPs a
    rollout leaving the operating domain raises ``DomainExitError``; callers
    mark such configurations excluded.
    """
    m = pair.true_mdp
    ctx = LipschitzContext(m.lip_f, m.lip_r, policy.lip_pi, m.gamma)
    s0 = np.atleast_2d(np.asarray(s0_set, dtype=np.float64))
    j_true = truncated_return(m, policy, s0, tol)
    j_hat = truncated_return(pair.hat_mdp, policy, s0, tol)
    lhs = float(np.max(np.abs(j_true - j_hat)))
    rhs = eq1_bound(ctx, pair.eps_dyn, pair.eps_rew)
    ratio = lhs / rhs if rhs > 0 else 0.0
    return BoundReport(lhs, rhs, ratio, pair.eps_dyn, pair.eps_rew, ctx, m.tag)


def paired_divergence(pair: PerturbedPair, policy: PolicySpec, s0: Array, horizon: int):
    """States, actions and rewards along the true and model rollouts from a
    shared start, as arrays of shape ``(horizon, ...)``."""
    s = np.asarray(s0, dtype=np.float64)
    sh = s.copy()
    out = {"s": [], "sh": [], "r": [], "rh": []}
    for _ in range(horizon):
        a, ah = policy(s), policy(sh)
        out["s"].append(s)
        out["sh"].append(sh)
        out["r"].append(pair.true_mdp.reward(s, a))
        out["rh"].append(pair.hat_mdp.reward(sh, ah))
        s, sh = pair.true_mdp.dynamics(s, a), pair.hat_mdp.dynamics(sh, ah)
    return {k: np.array(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# temporal straightening


class UndefinedCurvatureError(ValueError):
    pass


def curvature_loss(v_t: Array, v_t1: Array) -> float:
    """One minus the cosine between consecutive latent velocities."""
    v_t, v_t1 = np.asarray(v_t, dtype=np.float64), np.asarray(v_t1, dtype=np.float64)
    n0, n1 = np.linalg.norm(v_t), np.linalg.norm(v_t1)
    if n0 == 0.0 or n1 == 0.0:
        raise UndefinedCurvatureError("curvature is undefined for a zero velocity")
    cos = float(np.dot(v_t, v_t1) / (n0 * n1))
    return 1.0 - min(1.0, max(-1.0, cos))


def straightening_bound(epsilon: float) -> float:
    """``eps^2 / (2 (1 - eps))`` for an eps-Lipschitz velocity map, ``0 < eps < 1``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return epsilon**2 / (2.0 * (1.0 - epsilon))


@dataclass(frozen=True)
class StraighteningReport:
    epsilon: float
    losses: Array
    bound: float
    skipped: int

    @property
    def max_loss(self) -> float:
        return float(self.losses.max()) if self.losses.size else 0.0

    @property
    def holds(self) -> bool:
        return self.max_loss <= self.bound + 1e-12


def check_straightening(latent_rollout: Sequence[Array], epsilon: float) -> StraighteningReport:
    """Per-step curvature losses of a latent rollout ``z_0, z_1, ...``.

    Velocities are the successive differences; steps whose velocity pair
    contains a zero vector are skipped and counted.
    """
    z = np.asarray(latent_rollout, dtype=np.float64)
    v = np.diff(z, axis=0)
    losses, skipped = [], 0
    for t in range(len(v) - 1):
        try:
            losses.append(curvature_loss(v[t], v[t + 1]))
        except UndefinedCurvatureError:
            skipped += 1
    bound = straightening_bound(epsilon) if epsilon > 0 else 0.0
    return StraighteningReport(float(epsilon), np.array(losses), bound, skipped)


@dataclass(frozen=True)
class AffineVelocityMap:
    """``v(z) = eps * M z + c`` with ``M`` orthogonal, so ``v`` is exactly
    eps-Lipschitz."""

    m: Array
    c: Array
    epsilon: float

    def __call__(self, z: Array) -> Array:
        return self.epsilon * (z @ self.m.T) + self.c


def make_velocity_map(rng: np.random.Generator, dim: int, epsilon: float) -> AffineVelocityMap:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return AffineVelocityMap(q, rng.standard_normal(dim), float(epsilon))


def latent_rollout(vmap: AffineVelocityMap, z0: Array, steps: int) -> Array:
    """``z_{t+1} = z_t + v(z_t)``, returned as ``steps + 1`` states."""
    zs = [np.asarray(z0, dtype=np.float64)]
    for _ in range(steps):
        zs.append(zs[-1] + vmap(zs[-1]))
    return np.array(zs)
