"""Error-vs-samples scaling on a frozen random-MLP teacher environment.

Students are two-layer ReLU MLPs trained with hand-written backpropagation
and Adam; errors are held-out MSEs and power laws ``A * N**-exponent`` are
fit by log-log OLS with a seed-stratified bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rng import make_rng
from .stats import loglog_fit, stratified_bootstrap

TARGETS = ("dynamics", "reward")


# ---------------------------------------------------------------------------
# teacher environment


def _relu_mlp(x, w1, b1, w2, b2):
    return np.maximum(x @ w1 + b1, 0.0) @ w2 + b2


@dataclass(frozen=True)
class TeacherEnv:
    """Frozen random 2-layer ReLU teachers for next state and reward.

    ``s' = tanh(f_dyn([s, a]))`` and ``r = f_rew([s, a]) / sqrt(d_h)``, all
    weights standard normal and fixed by ``seed``.
    """

    seed: int
    d_s: int = 12
    d_a: int = 4
    d_h: int = 64
    dyn_params: tuple = field(init=False, repr=False)
    rew_params: tuple = field(init=False, repr=False)
    ref_policy: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = make_rng("teacher", self.seed, self.d_s, self.d_a, self.d_h)
        d_in = self.d_s + self.d_a

        def net(d_out):
            return (
                rng.standard_normal((d_in, self.d_h)),
                rng.standard_normal(self.d_h),
                rng.standard_normal((self.d_h, d_out)),
                rng.standard_normal(d_out),
            )

        object.__setattr__(self, "dyn_params", net(self.d_s))
        object.__setattr__(self, "rew_params", net(1))
        ref = make_rng("reference-policy", self.seed).standard_normal((self.d_a, self.d_s))
        object.__setattr__(self, "ref_policy", ref / math.sqrt(self.d_s))

    def step(self, s: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([s, a], axis=-1)
        s_next = np.tanh(_relu_mlp(x, *self.dyn_params))
        r = _relu_mlp(x, *self.rew_params)[..., 0] / math.sqrt(self.d_h)
        return s_next, r

    def reference_action(self, s: np.ndarray) -> np.ndarray:
        return 0.5 * np.tanh(s @ self.ref_policy.T)


@dataclass(frozen=True)
class Transitions:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray

    def __len__(self):
        return len(self.r)

    @property
    def inputs(self) -> np.ndarray:
        return np.concatenate([self.s, self.a], axis=1)

    def targets(self, target: str) -> np.ndarray:
        if target == "dynamics":
            return self.s_next
        if target == "reward":
            return self.r[:, None]
        raise ValueError(f"unknown target {target!r}")


def generate_dataset(
    teacher: TeacherEnv,
    seed: int,
    n: int,
    episode_length: int = 500,
    keep_per_episode: int = 50,
    action_noise: float = 1.0,
) -> Transitions:
    """Roll out the reference policy and subsample ``n`` transitions.

    Episodes start uniformly in ``[-1, 1]^d_s``; actions are the smooth
    reference policy ``0.5 tanh(W_ref s)`` plus Gaussian exploration noise;
    ``keep_per_episode`` steps are drawn uniformly without replacement from
    each episode.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    keep = min(keep_per_episode, episode_length)
    episodes = -(-n // keep)
    rng = make_rng("dataset", teacher.seed, seed, n)
    s = rng.uniform(-1.0, 1.0, (episodes, teacher.d_s))
    picks = np.sort(np.argsort(rng.uniform(size=(episodes, episode_length)), axis=1)[:, :keep], axis=1)
    last = int(picks[:, -1].max())
    out_s = np.empty((episodes, keep, teacher.d_s))
    out_a = np.empty((episodes, keep, teacher.d_a))
    out_sn = np.empty((episodes, keep, teacher.d_s))
    out_r = np.empty((episodes, keep))
    cursor = np.zeros(episodes, dtype=np.int64)
    rows = np.arange(episodes)
    for t in range(last + 1):
        a = teacher.reference_action(s) + action_noise * rng.standard_normal((episodes, teacher.d_a))
        s_next, r = teacher.step(s, a)
        hit = picks[rows, np.minimum(cursor, keep - 1)] == t
        hit &= cursor < keep
        idx, pos = rows[hit], cursor[hit]
        out_s[idx, pos], out_a[idx, pos], out_sn[idx, pos], out_r[idx, pos] = s[hit], a[hit], s_next[hit], r[hit]
        cursor[hit] += 1
        s = s_next
    flat = lambda x: x.reshape((episodes * keep,) + x.shape[2:])[:n]  # noqa: E731
    return Transitions(flat(out_s), flat(out_a), flat(out_sn), flat(out_r))


# ---------------------------------------------------------------------------
# student network


class Adam:
    """Adam with bias correction (defaults beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        step = self.lr / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= step * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class StudentMlp:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    history: dict = field(default_factory=lambda: {"train_mse": [], "val_mse": []})

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_out: int, d_h: int = 64) -> "StudentMlp":
        # U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, as torch.nn.Linear
        k1, k2 = 1.0 / math.sqrt(d_in), 1.0 / math.sqrt(d_h)
        return cls(
            rng.uniform(-k1, k1, (d_in, d_h)),
            rng.uniform(-k1, k1, d_h),
            rng.uniform(-k2, k2, (d_h, d_out)),
            rng.uniform(-k2, k2, d_out),
        )

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return _relu_mlp(x, self.w1, self.b1, self.w2, self.b2)

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean over the batch of the squared error summed over outputs."""
        z = x @ self.w1 + self.b1
        h = np.maximum(z, 0.0)
        err = h @ self.w2 + self.b2 - y
        n = len(x)
        loss = float(np.einsum("ij,ij->", err, err)) / n
        d_out = (2.0 / n) * err
        gw2 = h.T @ d_out
        gb2 = d_out.sum(axis=0)
        dz = (d_out @ self.w2.T) * (z > 0)
        gw1 = x.T @ dz
        gb1 = dz.sum(axis=0)
        return loss, [gw1, gb1, gw2, gb2]


def eval_mse(student: StudentMlp, holdout: Transitions, target: str) -> float:
    """Mean over transitions of the squared Euclidean prediction error."""
    if len(holdout) == 0:
        raise ValueError("empty holdout")
    err = student.forward(holdout.inputs) - holdout.targets(target)
    return float(np.einsum("ij,ij->", err, err)) / len(holdout)


def train_student(
    data: Transitions,
    target: str,
    epochs: int = 200,
    batch: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
    holdout: Optional[Transitions] = None,
    d_h: int = 64,
) -> StudentMlp:
    """Fixed-schedule Adam on per-head MSE, reshuffling every epoch.

    Validation MSE on ``holdout`` is logged per epoch and never used to stop
    or adjust training.
    """
    if len(data) == 0:
        raise ValueError("empty training data")
    x, y = data.inputs, data.targets(target)
    rng = make_rng("student", target, seed, len(data))
    net = StudentMlp.init(rng, x.shape[1], y.shape[1], d_h)
    opt = Adam(net.params, lr=lr)
    n = len(x)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = net.loss_and_grads(x[idx], y[idx])
            opt.step(net.params, grads)
            total += loss * len(idx)
        net.history["train_mse"].append(total / n)
        if holdout is not None:
            net.history["val_mse"].append(eval_mse(net, holdout, target))
    return net


def plateau_ratio(history: Sequence[float], frac: float = 0.1) -> float:
    """Relative drop of training MSE over the last ``frac`` of epochs."""
    h = np.asarray(history, dtype=np.float64)
    if h.size < 2:
        return float("nan")
    k = max(1, int(round(frac * h.size)))
    before = h[-k - 1]
    return float((before - h[-1]) / before) if before > 0 else 0.0


# ---------------------------------------------------------------------------
# power laws


@dataclass(frozen=True)
class PowerLaw:
    amplitude: float
    exponent: float
    r_squared: float
    se_amplitude: float = 0.0
    se_exponent: float = 0.0
    ci_amplitude: tuple[float, float] = (float("nan"), float("nan"))
    ci_exponent: tuple[float, float] = (float("nan"), float("nan"))

    def __call__(self, n):
        return self.amplitude * np.asarray(n, dtype=np.float64) ** (-self.exponent)

    def inverse(self, eps: float) -> float:
        """Sample count at which the fitted error equals ``eps``."""
        return (self.amplitude / eps) ** (1.0 / self.exponent)


def _fit_means(ns: np.ndarray, strata: list[np.ndarray]) -> np.ndarray:
    fit = loglog_fit(ns, [g.mean() for g in strata])
    return np.array([math.exp(fit.intercept), -fit.slope])


def fit_power_law(
    ns: Sequence[float],
    per_seed: Sequence[Sequence[float]],
    resamples: int = 1000,
    seed: int = 0,
) -> PowerLaw:
    """Log-log OLS on per-anchor means with a seed-stratified bootstrap."""
    ns = np.asarray(ns, dtype=np.float64)
    strata = [np.asarray(g, dtype=np.float64) for g in per_seed]
    if len(ns) < 3 or len(strata) != len(ns):
        raise ValueError("need at least three anchors, one seed list per anchor")
    if any((g <= 0).any() for g in strata) or (ns <= 0).any():
        raise ValueError("power-law fit needs positive sample counts and errors")
    fit = loglog_fit(ns, [g.mean() for g in strata])
    boot = stratified_bootstrap(strata, lambda gs: _fit_means(ns, gs), resamples, seed)
    lo, hi = boot.ci95
    return PowerLaw(
        amplitude=math.exp(fit.intercept),
        exponent=-fit.slope,
        r_squared=fit.r_squared,
        se_amplitude=float(boot.se[0]),
        se_exponent=float(boot.se[1]),
        ci_amplitude=(float(lo[0]), float(hi[0])),
        ci_exponent=(float(lo[1]), float(hi[1])),
    )


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class ScalingConfig:
    anchors: tuple[int, ...] = (2_000, 5_000, 10_000, 20_000, 50_000)
    seeds: int = 10
    epochs: int = 50
    batch: int = 256
    lr: float = 1e-3
    holdout_size: int = 5_000
    teacher_seed: int = 0
    d_s: int = 12
    d_a: int = 4
    d_h: int = 64
    episode_length: int = 500
    keep_per_episode: int = 50
    action_noise: float = 1.0
    bootstrap_resamples: int = 1000

    @classmethod
    def paper(cls, **kw) -> "ScalingConfig":
        base = dict(anchors=(2_000, 5_000, 10_000, 20_000, 50_000, 100_000, 200_000), seeds=100, epochs=200)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class ScalingRun:
    """One (anchor, seed) task: final validation MSE of both heads."""

    n: int
    seed: int
    dynamics_mse: float
    reward_mse: float
    dynamics_plateau: float
    reward_plateau: float


def make_teacher(cfg: ScalingConfig) -> TeacherEnv:
    return TeacherEnv(cfg.teacher_seed, cfg.d_s, cfg.d_a, cfg.d_h)


def make_holdout(cfg: ScalingConfig, teacher: TeacherEnv) -> Transitions:
    # a distinct data-seed namespace keeps the holdout independent of every training pool
    return generate_dataset(
        teacher, 10**9 + cfg.teacher_seed, cfg.holdout_size, cfg.episode_length, cfg.keep_per_episode, cfg.action_noise
    )


def run_anchor_seed(cfg: ScalingConfig, n: int, seed: int, base_seed: int = 0) -> ScalingRun:
    teacher = make_teacher(cfg)
    holdout = make_holdout(cfg, teacher)
    data_seed = base_seed * 1_000_003 + seed
    data = generate_dataset(teacher, data_seed, n, cfg.episode_length, cfg.keep_per_episode, cfg.action_noise)
    out = {}
    for target in TARGETS:
        net = train_student(data, target, cfg.epochs, cfg.batch, cfg.lr, data_seed, d_h=cfg.d_h)
        out[target] = (eval_mse(net, holdout, target), plateau_ratio(net.history["train_mse"]))
    return ScalingRun(n, seed, out["dynamics"][0], out["reward"][0], out["dynamics"][1], out["reward"][1])


def fit_scaling_runs(cfg: ScalingConfig, runs: Sequence[ScalingRun], seed: int = 0) -> dict[str, PowerLaw]:
    ns = sorted({r.n for r in runs})
    laws = {}
    for target in TARGETS:
        per_seed = [[getattr(r, f"{target}_mse") for r in runs if r.n == n] for n in ns]
        laws[target] = fit_power_law(ns, per_seed, cfg.bootstrap_resamples, seed)
    return laws
