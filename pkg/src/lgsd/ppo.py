"""Skill-conditioned tanh-Gaussian policy, value function, GAE and clipped-surrogate PPO.

Policy and value are separate networks over ``[state, skill]``. Rollouts keep
the pre-squash sample ``u`` so log-probabilities never need ``atanh``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import AdamState, Mlp, NonFiniteError, forward, forward_backward, init_mlp, opt_step

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PolicyParams:
    mean: Mlp
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return self.mean.arrays() + [self.log_std]

    def with_arrays(self, arrays) -> "PolicyParams":
        return PolicyParams(self.mean.with_arrays(arrays[:-1]), np.clip(arrays[-1], LOG_STD_MIN, LOG_STD_MAX))

    def to_dict(self) -> dict:
        return {"mean": self.mean.to_dict(), "log_std": self.log_std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyParams":
        return cls(Mlp.from_dict(d["mean"]), np.asarray(d["log_std"], dtype=np.float64))


def init_policy(state_dim, skill_dim, action_dim, hidden, rng, activation="elu", log_std=0.0) -> PolicyParams:
    mean = init_mlp([state_dim + skill_dim, *hidden, action_dim], activation, rng)
    # shrink the output layer so initial actions are near zero mean
    w = list(mean.weights)
    w[-1] = w[-1] * 0.01
    return PolicyParams(Mlp(tuple(w), mean.biases, mean.activations), np.full(action_dim, float(log_std)))


def init_value(state_dim, skill_dim, hidden, rng, activation="elu") -> Mlp:
    return init_mlp([state_dim + skill_dim, *hidden, 1], activation, rng)


def _obs(s, z) -> np.ndarray:
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 1 and s.shape[0] > 1:
        z = np.repeat(z, s.shape[0], axis=0)
    return np.concatenate([s, z], axis=1)


def _log1m_tanh2(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(u, mean, log_std) -> np.ndarray:
    std = np.exp(log_std)
    return np.sum(-0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * _LOG_2PI, axis=-1)


def squashed_log_prob(u, mean, log_std) -> np.ndarray:
    """Log density of ``a = tanh(u)`` where ``u ~ N(mean, exp(log_std)^2)``."""
    return gaussian_log_prob(u, mean, log_std) - np.sum(_log1m_tanh2(u), axis=-1)


def policy_mean(policy: PolicyParams, s, z) -> np.ndarray:
    out = forward(policy.mean, _obs(s, z))
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("policy network produced non-finite output")
    return out


def sample_action(policy: PolicyParams, s, z, rng: np.random.Generator, deterministic: bool = False):
    """Draw ``a = tanh(u)``; returns ``(a, logprob, u)`` with one row per state."""
    mean = policy_mean(policy, s, z)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    u = mean if deterministic else mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return np.tanh(u), squashed_log_prob(u, mean, log_std), u


def gae(rewards, values, dones, gamma: float = 0.99, lam: float = 0.95, last_value: float = 0.0):
    """Generalized advantage estimates and returns for one time-ordered stream.

    ``values[t]`` estimates ``V(s_t)``; the value of the state after the last
    step is ``last_value`` (ignored if that step is terminal).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = len(rewards)
    adv = np.zeros(T)
    next_v = last_value
    running = 0.0
    for t in range(T - 1, -1, -1):
        alive = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * alive - values[t]
        running = delta + gamma * lam * alive * running
        adv[t] = running
        next_v = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    states: np.ndarray
    skills: np.ndarray
    u: np.ndarray
    logp_old: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.rewards)

    def subset(self, idx) -> "RolloutBatch":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return RolloutBatch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))


def normalize(x: np.ndarray) -> np.ndarray:
    if len(x) < 2:
        return x.copy()
    return (x - x.mean()) / (x.std() + 1e-8)


def surrogate(policy: PolicyParams, states, skills, u, logp_old, advantages, clip: float = 0.2, entropy_coef: float = 1e-4):
    """Clipped surrogate plus entropy bonus (to be maximized) and its gradient.

    The entropy term is the pre-squash Gaussian entropy. Returns
    ``(objective, grads, stats)`` with ``grads`` aligned to ``policy.arrays()``.
    """
    n = len(advantages)
    log_std = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std2 = np.exp(2.0 * log_std)
    A = np.asarray(advantages, dtype=np.float64)
    cache = {}

    def upstream(mean):
        logp = squashed_log_prob(u, mean, log_std)
        ratio = np.exp(logp - logp_old)
        clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
        active = np.where(A > 0, ratio <= 1.0 + clip, np.where(A < 0, ratio >= 1.0 - clip, False))
        coeff = np.where(active, A * ratio, 0.0) / n
        cache.update(ratio=ratio, clipped=clipped, coeff=coeff, mean=mean)
        return coeff[:, None] * (u - mean) / std2

    _, g_mean, _ = forward_backward(policy.mean, _obs(states, skills), upstream)
    ratio, mean, coeff = cache["ratio"], cache["mean"], cache["coeff"]
    surr = float(np.mean(np.minimum(ratio * A, cache["clipped"] * A)))
    entropy = float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))
    g_log_std = coeff @ ((u - mean) ** 2 / std2 - 1.0) + entropy_coef
    # the clamp is flat outside its range
    g_log_std = np.where((policy.log_std < LOG_STD_MIN) | (policy.log_std > LOG_STD_MAX), 0.0, g_log_std)
    stats = {
        "surrogate": surr,
        "entropy": entropy,
        "ratio_mean": float(ratio.mean()),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)),
    }
    return surr + entropy_coef * entropy, g_mean.arrays() + [np.asarray(g_log_std, dtype=np.float64)], stats


def value_loss(value: Mlp, states, skills, returns, coef: float = 0.5):
    """``coef * mean((V - R)^2)`` and its gradient."""
    n = len(returns)

    def upstream(v):
        return coef * 2.0 * (v - returns[:, None]) / n

    v, g, _ = forward_backward(value, _obs(states, skills), upstream)
    return float(coef * np.mean((v[:, 0] - returns) ** 2)), g.arrays()


@dataclass
class PpoState:
    policy: PolicyParams
    value: Mlp
    policy_opt: AdamState
    value_opt: AdamState

    @classmethod
    def create(cls, policy: PolicyParams, value: Mlp) -> "PpoState":
        return cls(policy, value, AdamState.zeros_like(policy.arrays()), AdamState.zeros_like(value.arrays()))


def ppo_step(st: PpoState, mb: RolloutBatch, lr: float, clip: float = 0.2, entropy_coef: float = 1e-4, vf_coef: float = 0.5, value_lr: float | None = None) -> dict:
    """One policy and one value gradient step on a minibatch (in place on ``st``)."""
    obj, g_pi, stats = surrogate(st.policy, mb.states, mb.skills, mb.u, mb.logp_old, mb.advantages, clip, entropy_coef)
    vloss, g_v = value_loss(st.value, mb.states, mb.skills, mb.returns, vf_coef)
    if not (np.isfinite(obj) and np.isfinite(vloss)):
        raise NonFiniteError(f"non-finite PPO loss: objective={obj}, value loss={vloss}")
    new_pi, st.policy_opt = opt_step(st.policy.arrays(), [-g for g in g_pi], st.policy_opt, lr)
    st.policy = st.policy.with_arrays(new_pi)
    new_v, st.value_opt = opt_step(st.value.arrays(), g_v, st.value_opt, value_lr or lr)
    st.value = st.value.with_arrays(new_v)
    stats.update(policy_objective=obj, value_loss=vloss)
    return stats


def prepare_advantages(batch: RolloutBatch, gamma: float, lam: float, episode_ids: np.ndarray | None = None, normalize_adv: bool = True) -> RolloutBatch:
    """Fill ``advantages``/``returns`` per episode (rows must be time-ordered within an episode)."""
    adv = np.zeros(len(batch))
    ret = np.zeros(len(batch))
    ids = np.zeros(len(batch), dtype=np.int64) if episode_ids is None else np.asarray(episode_ids)
    for e in np.unique(ids):
        rows = np.nonzero(ids == e)[0]
        a, r = gae(batch.rewards[rows], batch.values[rows], batch.dones[rows], gamma, lam)
        adv[rows], ret[rows] = a, r
    batch.advantages = normalize(adv) if normalize_adv else adv
    batch.returns = ret
    return batch


def ppo_update(st: PpoState, batch: RolloutBatch, rng: np.random.Generator, clip: float = 0.2, epochs: int = 5, entropy_coef: float = 1e-4, lr: float = 1e-4, minibatch: int = 512, vf_coef: float = 0.5) -> dict:
    """Several shuffled passes of :func:`ppo_step` over a prepared batch."""
    if batch.advantages is None:
        raise ValueError("batch advantages have not been computed")
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), minibatch):
            history.append(ppo_step(st, batch.subset(order[start:start + minibatch]), lr, clip, entropy_coef, vf_coef))
    return {k: float(np.mean([h[k] for h in history])) for k in history[0]} if history else {}
