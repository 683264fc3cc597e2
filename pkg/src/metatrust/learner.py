"""Minimal PPO-clip actor-critic on a flat parameter vector.

The network is a tanh MLP trunk shared by a Gaussian policy head (mean per
action dimension plus a state-independent log-std vector) and a scalar
value head. All parameters live in one float64 vector so SGD, gradient
checks and zero-step-size identities act on a single array.

Flat layout for ``sizes = (n_in, h1, ..., hk, n_act)``::

    for each trunk layer: W (out x in, row-major), b (out)
    mean head:  W (n_act x hk), b (n_act)
    value head: w (hk), b (1)
    log_std (n_act)
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from metatrust import kernels
from metatrust.envs import CorruptionScheme, Env, corruption_offsets
from metatrust.errors import ConfigError, DataQualityError, PreconditionError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class ParamLayout:
    def __init__(self, n_in: int, hidden=(32, 32), n_act: int = 1):
        self.sizes = np.array([n_in, *hidden, n_act], dtype=np.int64)
        self.n_in = int(n_in)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_act = int(n_act)
        self.slices: dict[str, slice] = {}
        off = 0

        def take(name, n):
            nonlocal off
            self.slices[name] = slice(off, off + n)
            off += n

        dims = [self.n_in, *self.hidden]
        for i in range(len(self.hidden)):
            take(f"W{i}", dims[i + 1] * dims[i])
            take(f"b{i}", dims[i + 1])
        last = dims[-1]
        take("Wm", self.n_act * last)
        take("bm", self.n_act)
        take("wv", last)
        take("bv", 1)
        take("log_std", self.n_act)
        self.size = off
        self._last = last
        self._dims = dims

    def trunk(self, flat):
        out = []
        for i in range(len(self.hidden)):
            w = flat[self.slices[f"W{i}"]].reshape(self._dims[i + 1], self._dims[i])
            out.append((w, flat[self.slices[f"b{i}"]]))
        return out

    def heads(self, flat):
        wm = flat[self.slices["Wm"]].reshape(self.n_act, self._last)
        return wm, flat[self.slices["bm"]], flat[self.slices["wv"]], flat[self.slices["bv"]]

    def log_std(self, flat):
        return flat[self.slices["log_std"]]

    def init(self, rng: np.random.Generator, log_std: float = 0.0) -> np.ndarray:
        flat = np.zeros(self.size)
        for i in range(len(self.hidden)):
            fan_in = self._dims[i]
            flat[self.slices[f"W{i}"]] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), self._dims[i + 1] * fan_in)
        flat[self.slices["Wm"]] = rng.normal(0.0, 0.01 / math.sqrt(self._last), self.n_act * self._last)
        flat[self.slices["wv"]] = rng.normal(0.0, 1.0 / math.sqrt(self._last), self._last)
        flat[self.slices["log_std"]] = log_std
        return flat


@dataclass
class Policy:
    """Parameters plus their layout; the learner's ``theta``."""

    layout: ParamLayout
    flat: np.ndarray

    @classmethod
    def create(cls, n_in, n_act, hidden=(32, 32), rng=None, log_std: float = 0.0) -> "Policy":
        layout = ParamLayout(n_in, hidden, n_act)
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(layout, layout.init(rng, log_std))

    def copy(self) -> "Policy":
        return Policy(self.layout, self.flat.copy())


def forward_policy_value(policy: Policy, state) -> tuple[np.ndarray, np.ndarray, float]:
    obs = np.asarray(state, dtype=np.float64)
    if obs.shape != (policy.layout.n_in,):
        raise ConfigError(f"state has shape {obs.shape}, network expects ({policy.layout.n_in},)")
    mean, log_std, value = kernels.forward_single(policy.flat, policy.layout.sizes, obs)
    return mean, log_std, float(value)


def forward_batch(layout: ParamLayout, flat: np.ndarray, obs: np.ndarray):
    hs = [obs]
    h = obs
    for w, b in layout.trunk(flat):
        h = np.tanh(h @ w.T + b)
        hs.append(h)
    wm, bm, wv, bv = layout.heads(flat)
    mean = h @ wm.T + bm
    value = h @ wv + bv[0]
    return mean, value, hs


def gaussian_logp(actions, mean, log_std):
    z = (actions - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * mean.shape[-1] * _LOG_2PI


# ---------------------------------------------------------------- rollouts


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    clean_rewards: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray  # length n + 1, last entry is the bootstrap value
    logp: np.ndarray
    deltas: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    offsets: np.ndarray | None = None
    episode_returns: list = field(default_factory=list)

    def __len__(self):
        return self.rewards.shape[0]


class RolloutState:
    """Carries the live environment and its in-progress episode across iterations."""

    def __init__(self, env: Env):
        self.env = env
        self.ep_return = 0.0
        self.global_step = 0


def collect_rollout(
    rollout: RolloutState,
    policy: Policy,
    n_steps: int,
    corruption: CorruptionScheme,
    action_rng: np.random.Generator,
    corruption_rng: np.random.Generator,
    deterministic: bool = False,
) -> Trajectory:
    if n_steps < 1:
        raise PreconditionError("n_steps must be positive")
    env = rollout.env
    spec = env.spec
    n_act = policy.layout.n_act
    noise = np.zeros((n_steps, n_act)) if deterministic else action_rng.standard_normal((n_steps, n_act))
    offsets = corruption_offsets(corruption, rollout.global_step, n_steps, corruption_rng)

    obs = np.empty((n_steps, spec.state_dim))
    actions = np.empty((n_steps, n_act))
    clean = np.empty(n_steps)
    dones = np.zeros(n_steps)
    values = np.empty(n_steps + 1)
    logp = np.empty(n_steps)
    finished = []
    flat, sizes = policy.flat, policy.layout.sizes
    const = 0.5 * n_act * _LOG_2PI
    fwd = kernels.forward_single

    state = env.state
    for i in range(n_steps):
        o = spec.observe(state)
        mean, log_std, v = fwd(flat, sizes, o)
        a = mean + np.exp(log_std) * noise[i]
        z = noise[i]
        obs[i] = o
        actions[i] = a
        values[i] = v
        logp[i] = -0.5 * float(z @ z) - float(log_std.sum()) - const
        state, r, done = env.step(a)
        clean[i] = r
        rollout.ep_return += r
        if done:
            dones[i] = 1.0
            finished.append(rollout.ep_return)
            rollout.ep_return = 0.0
            state = env.reset()
    values[n_steps] = fwd(flat, sizes, spec.observe(state))[2]
    if not np.all(np.isfinite(values)):
        raise DataQualityError("non-finite value prediction during rollout")
    rollout.global_step += n_steps
    return Trajectory(
        obs, actions, clean, clean + offsets, dones, values, logp, offsets=offsets, episode_returns=finished
    )


def compute_gae(traj: Trajectory, gamma: float = 0.99, lam: float = 0.95) -> Trajectory:
    if traj.values.shape[0] != len(traj) + 1:
        raise PreconditionError("values must include the bootstrap value for the final state")
    deltas, adv = kernels.gae(traj.rewards, traj.values, traj.dones, float(gamma), float(lam))
    traj.deltas = np.asarray(deltas)
    traj.advantages = np.asarray(adv)
    traj.returns = traj.advantages + traj.values[:-1]
    return traj


def td_variance_weights(deltas, sigma_ref: float = 1.0) -> np.ndarray:
    """Per-sample weights shrinking with |delta - mean(delta)|, normalized to mean 1."""
    d = np.asarray(deltas, dtype=np.float64)
    if d.size == 0:
        raise PreconditionError("need at least one TD error")
    if sigma_ref <= 0:
        raise PreconditionError("sigma_ref must be positive")
    if math.isinf(sigma_ref):
        return np.ones_like(d)
    return np.asarray(kernels.td_weights(d, float(sigma_ref)))


# ---------------------------------------------------------------- PPO loss


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    rollout_length: int = 512
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    clip_value: bool = False
    hidden: tuple = (32, 32)
    sigma_ref: float = 1.0
    init_log_std: float = 0.0
    max_grad_norm: float | None = None

    def validate(self) -> "PPOConfig":
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        for name in ("epochs", "minibatch", "rollout_length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.sigma_ref <= 0:
            raise ConfigError("sigma_ref must be positive")
        return self


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values_old: np.ndarray
    weights: np.ndarray

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def ppo_loss_and_grad(layout: ParamLayout, flat: np.ndarray, batch: Batch, cfg: PPOConfig):
    """Total PPO loss and its gradient with respect to ``flat``."""
    n = batch.obs.shape[0]
    mean, value, hs = forward_batch(layout, flat, batch.obs)
    log_std = layout.log_std(flat)
    inv_std = np.exp(-log_std)
    z = (batch.actions - mean) * inv_std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * layout.n_act * _LOG_2PI
    ratio = np.exp(logp - batch.logp_old)
    adv, w = batch.advantages, batch.weights
    eps = cfg.clip_eps
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    take1 = surr1 <= surr2
    policy_loss = -np.mean(w * np.minimum(surr1, surr2))

    err = value - batch.returns
    if cfg.clip_value:
        dv = value - batch.values_old
        v_clip = batch.values_old + np.clip(dv, -eps, eps)
        err_c = v_clip - batch.returns
        use_plain = err * err >= err_c * err_c
        vl = np.where(use_plain, err * err, err_c * err_c)
        dvl = np.where(use_plain, 2.0 * err, 2.0 * err_c * (np.abs(dv) < eps))
    else:
        vl = err * err
        dvl = 2.0 * err
    value_loss = np.mean(w * vl)
    entropy = float(np.sum(log_std)) + 0.5 * layout.n_act * (1.0 + _LOG_2PI)
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy

    # d loss / d logp
    g_logp = -(w * adv * ratio * take1) / n
    d_mean = g_logp[:, None] * z * inv_std
    d_log_std = g_logp @ (z * z - 1.0) - cfg.ent_coef
    d_value = cfg.vf_coef * w * dvl / n

    grad = np.zeros_like(flat)
    s = layout.slices
    h = hs[-1]
    grad[s["Wm"]] = (d_mean.T @ h).ravel()
    grad[s["bm"]] = d_mean.sum(axis=0)
    grad[s["wv"]] = d_value @ h
    grad[s["bv"]] = d_value.sum()
    grad[s["log_std"]] = d_log_std
    wm, _, wv, _ = layout.heads(flat)
    dh = d_mean @ wm + np.outer(d_value, wv)
    trunk = layout.trunk(flat)
    for i in range(len(trunk) - 1, -1, -1):
        dz = dh * (1.0 - hs[i + 1] ** 2)
        grad[s[f"W{i}"]] = (dz.T @ hs[i]).ravel()
        grad[s[f"b{i}"]] = dz.sum(axis=0)
        if i:
            dh = dz @ trunk[i][0]
    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
    }
    return float(loss), grad, stats


def ppo_loss(layout: ParamLayout, flat: np.ndarray, batch: Batch, cfg: PPOConfig) -> float:
    return ppo_loss_and_grad(layout, flat, batch, cfg)[0]


def make_batch(traj: Trajectory, weights: np.ndarray) -> Batch:
    if traj.advantages is None:
        raise PreconditionError("compute_gae must run before the PPO update")
    adv = traj.advantages
    adv = (adv - adv.mean()) / max(float(adv.std()), 1e-8)
    return Batch(traj.obs, traj.actions, traj.logp, adv, traj.returns, traj.values[:-1], np.asarray(weights))


class Learner:
    """Owns the policy, the PPO config and the recent gradient-norm history."""

    def __init__(self, policy: Policy, cfg: PPOConfig):
        self.policy = policy
        self.cfg = cfg.validate()
        self.grad_norms: deque = deque(maxlen=10)
        self.incidents = 0

    def ppo_update(self, traj: Trajectory, weights, effective_lr: float, rng: np.random.Generator) -> dict:
        return ppo_update(self, traj, weights, effective_lr, rng)


def ppo_update(learner: Learner, traj: Trajectory, weights, effective_lr: float, rng: np.random.Generator) -> dict:
    """Weighted PPO-clip epochs of plain SGD with step size ``effective_lr``.

    Non-finite losses or gradients skip that minibatch and count an incident.
    A zero step size leaves the parameters bit-identical.
    """
    cfg = learner.cfg
    layout = learner.policy.layout
    flat = learner.policy.flat
    batch = make_batch(traj, weights)
    n = batch.obs.shape[0]
    losses, norms, skipped = [], [], 0
    ls = layout.slices["log_std"]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = batch.take(perm[start:start + cfg.minibatch])
            with np.errstate(all="ignore"):
                loss, grad, _ = ppo_loss_and_grad(layout, flat, mb, cfg)
                gnorm = float(np.sqrt(grad @ grad)) if np.all(np.isfinite(grad)) else math.inf
            if not (math.isfinite(loss) and math.isfinite(gnorm)):
                skipped += 1
                continue
            if cfg.max_grad_norm is not None and gnorm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / gnorm)
            if effective_lr != 0.0:
                flat -= effective_lr * grad
                np.clip(flat[ls], LOG_STD_MIN, LOG_STD_MAX, out=flat[ls])
            losses.append(loss)
            norms.append(gnorm)
            learner.grad_norms.append(gnorm)
    learner.incidents += skipped
    recent = np.asarray(learner.grad_norms)
    return {
        "loss": float(np.mean(losses)) if losses else math.nan,
        "grad_norm": float(np.mean(norms)) if norms else math.nan,
        "grad_norm_var": float(recent.var()) if recent.size else 0.0,
        "skipped": skipped,
    }
