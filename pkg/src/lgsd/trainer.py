"""End-to-end skill discovery loop and the downstream goal-reaching controller.

One epoch: sample a skill per episode, roll out, annotate each transition
with its reward under the current representation, its language distance and
the embedding of the start state; then sweep the buffer in minibatches, each
applying the representation step, the multiplier step, the PPO step and the
skill-inference step, in that order. The buffer is discarded afterwards.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .core_math import AdamState, Mlp, NonFiniteError, forward
from .describer import DescriptionCache, Describer
from .embed import LanguageSpace, make_embedder
from .env import make_env
from .ppo import PolicyParams, PpoState, RolloutBatch, init_policy, init_value, ppo_step, prepare_advantages, sample_action
from .skill_core import dual_update, init_phi, init_psi, intrinsic_reward, phi_inputs, phi_update, psi_update, slack

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Buffer:
    """Transition table; row ``i`` is ``(s, a, r, s', d_lang, e_s, z, done)``."""

    states: np.ndarray
    actions: np.ndarray
    u: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    d_lang: np.ndarray
    text_ids: np.ndarray
    next_text_ids: np.ndarray
    skills: np.ndarray
    dones: np.ndarray
    episode: np.ndarray
    t: np.ndarray
    embeddings: np.ndarray
    features: np.ndarray
    next_features: np.ndarray

    def __len__(self):
        return len(self.rewards)

    def rollout_batch(self, values: np.ndarray) -> RolloutBatch:
        return RolloutBatch(self.states, self.skills, self.u, self.logp, self.rewards, values, self.dones)

    def save(self, path) -> None:
        np.savez(path, **{k: getattr(self, k) for k in self.__dataclass_fields__})

    def episodes(self):
        for e in np.unique(self.episode):
            yield self.episode == e


@dataclass
class Checkpoint:
    config: RunConfig
    policy: PolicyParams
    value: Mlp
    phi: Mlp
    psi: Mlp
    lam: float
    rng_state: dict
    epoch: int = 0
    kind: str = "lgsd"

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "lambda": self.lam,
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "params": {"pi": self.policy.to_dict(), "v": self.value.to_dict(), "phi": self.phi.to_dict(), "psi": self.psi.to_dict()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        p = d["params"]
        return cls(
            cfgmod.from_dict(d["config"]),
            PolicyParams.from_dict(p["pi"]),
            Mlp.from_dict(p["v"]),
            Mlp.from_dict(p["phi"]),
            Mlp.from_dict(p["psi"]),
            float(d["lambda"]),
            d["rng_state"],
            int(d["epoch"]),
            d.get("kind", "lgsd"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_dict(json.loads(p.read_text()))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def build_language_space(config: RunConfig) -> LanguageSpace:
    dc = config.describer
    cache = None
    if dc.cache_path and Path(dc.cache_path).is_file():
        cache = DescriptionCache.load(dc.cache_path)
        if cache.template_id != dc.template or cache.rho != dc.rho:
            raise ValueError(f"cache {dc.cache_path} was built for {cache.template_id}/rho={cache.rho}")
    describer = Describer(dc.template, dc.rho, backend=dc.backend, cache=cache)
    ec = config.embedder
    embedder = make_embedder(ec.backend, ec.n_features, ec.seed, ec.tokenizer)
    return LanguageSpace(describer, embedder)


def phi_features(config: RunConfig, states) -> np.ndarray:
    return phi_inputs(states, config.describer.rho, config.skill.phi_input)


def _check_template(config: RunConfig) -> None:
    from .describer import template_env

    env = template_env(config.describer.template)
    if env not in ("any", config.env.name):
        raise ValueError(f"template {config.describer.template} is for the {env} environment, not {config.env.name}")


def init_checkpoint(config: RunConfig) -> Checkpoint:
    _check_template(config)
    rng = np.random.default_rng(config.trainer.seed)
    env = make_env(config.env)
    d = config.skill.dim
    policy = init_policy(env.state_dim, d, env.action_dim, config.hidden("policy"), rng, log_std=config.ppo.log_std_init)
    value = init_value(env.state_dim, d, config.hidden("policy"), rng)
    phi = init_phi(env.state_dim, d, config.hidden("phi"), rng)
    psi = init_psi(config.embedder.n_features, d, config.hidden("psi"), rng)
    return Checkpoint(config, policy, value, phi, psi, float(config.skill.init_lambda), rng.bit_generator.state, 0)


def rollout(policy: PolicyParams, env, skills: np.ndarray, seeds, rng: np.random.Generator, deterministic: bool = False, skill_fn=None):
    """Run one episode per skill row; returns ``(states[T+1, n, ds], actions, u, logp)``.

    ``skill_fn(t, states, skills)`` may replace the skills mid-episode
    (used by the goal-reaching controller).
    """
    T = env.config.episode_length
    s = env.reset_batch(seeds)
    n = len(s)
    states = np.empty((T + 1, n, env.state_dim))
    acts = np.empty((T, n, env.action_dim))
    us = np.empty_like(acts)
    logps = np.empty((T, n))
    states[0] = s
    z = skills
    for t in range(T):
        if skill_fn is not None:
            z = skill_fn(t, s, z)
        a, lp, u = sample_action(policy, s, z, rng, deterministic)
        s = env.step(s, a)
        states[t + 1], acts[t], us[t], logps[t] = s, a, u, lp
    return states, acts, us, logps


def collect_epoch(policy: PolicyParams, phi: Mlp, env, space: LanguageSpace, n_episodes: int, skill_dim: int, rng: np.random.Generator, deterministic: bool = False, featurize=None) -> Buffer:
    skills = rng.standard_normal((n_episodes, skill_dim))
    seeds = rng.integers(0, 2**31 - 1, size=n_episodes)
    states, acts, us, logps = rollout(policy, env, skills, seeds, rng, deterministic)
    T = env.config.episode_length
    # episode-major rows so each episode is contiguous and time-ordered
    s = states[:-1].transpose(1, 0, 2).reshape(-1, env.state_dim)
    s2 = states[1:].transpose(1, 0, 2).reshape(-1, env.state_dim)
    z = np.repeat(skills, T, axis=0)
    featurize = featurize or (lambda x: x)
    f, f2 = featurize(s), featurize(s2)
    ids = space.text_ids(s)
    ids2 = space.text_ids(s2)
    dones = np.zeros(n_episodes * T)
    dones[T - 1::T] = 1.0
    return Buffer(
        states=s,
        actions=acts.transpose(1, 0, 2).reshape(-1, env.action_dim),
        u=us.transpose(1, 0, 2).reshape(-1, env.action_dim),
        logp=logps.T.reshape(-1),
        rewards=intrinsic_reward(phi, f, f2, z),
        next_states=s2,
        d_lang=space.distance_ids(ids, ids2),
        text_ids=ids,
        next_text_ids=ids2,
        skills=z,
        dones=dones,
        episode=np.repeat(np.arange(n_episodes), T),
        t=np.tile(np.arange(T), n_episodes),
        embeddings=space.matrix[ids],
        features=f,
        next_features=f2,
    )


@dataclass
class Learner:
    """Mutable training state around an immutable-parameter checkpoint."""

    config: RunConfig
    ppo: PpoState
    phi: Mlp
    psi: Mlp
    lam: float
    rng: np.random.Generator
    epoch: int
    phi_opt: AdamState = None
    psi_opt: AdamState = None

    def __post_init__(self):
        self.phi_opt = self.phi_opt or AdamState.zeros_like(self.phi.arrays())
        self.psi_opt = self.psi_opt or AdamState.zeros_like(self.psi.arrays())

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "Learner":
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.rng_state
        return cls(ck.config, PpoState.create(ck.policy, ck.value), ck.phi, ck.psi, ck.lam, rng, ck.epoch)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.config, self.ppo.policy, self.ppo.value, self.phi, self.psi, self.lam, self.rng.bit_generator.state, self.epoch)


def update_epoch(learner: Learner, buf: Buffer, on_update: Callable[[str], None] | None = None) -> dict:
    """Minibatch sweeps over the buffer: representation, multiplier, policy, skill inference."""
    c = learner.config
    values = forward(learner.ppo.value, np.concatenate([buf.states, buf.skills], axis=1))[:, 0]
    batch = prepare_advantages(buf.rollout_batch(values), c.ppo.gamma, c.ppo.gae_lambda, buf.episode, c.ppo.normalize_advantages)
    sk = c.skill
    stats: dict[str, list] = {"phi_objective": [], "psi_loss": [], "slack_mean": []}
    ppo_hist = []
    n = len(buf)
    for _ in range(c.ppo.epochs):
        order = learner.rng.permutation(n)
        for start in range(0, n, c.ppo.minibatch):
            idx = order[start:start + c.ppo.minibatch]
            s, s2, z, d = buf.features[idx], buf.next_features[idx], buf.skills[idx], buf.d_lang[idx]
            learner.phi, learner.phi_opt, obj = phi_update(learner.phi, learner.phi_opt, learner.lam, sk.eps, s, s2, z, d, sk.phi_lr)
            on_update and on_update("phi")
            sl = slack(learner.phi, s, s2, d)
            learner.lam = dual_update(learner.lam, sk.eps, sl, sk.lr_dual)
            on_update and on_update("lambda")
            ppo_hist.append(ppo_step(learner.ppo, batch.subset(idx), c.ppo.lr, c.ppo.clip, c.ppo.entropy_coef, c.ppo.vf_coef, c.ppo.value_lr))
            on_update and on_update("policy")
            learner.psi, learner.psi_opt, pl = psi_update(learner.psi, learner.psi_opt, buf.embeddings[idx], z, sk.psi_lr)
            on_update and on_update("psi")
            stats["phi_objective"].append(obj)
            stats["psi_loss"].append(pl)
            stats["slack_mean"].append(float(np.mean(sl)))
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out.update({k: float(np.mean([h[k] for h in ppo_hist])) for k in ppo_hist[0]})
    return out


def constraint_stats(phi: Mlp, buf: Buffer, tol: float = 1e-3) -> dict:
    delta = forward(phi, buf.next_features) - forward(phi, buf.features)
    sq = np.sum(delta * delta, axis=1)
    same = buf.text_ids == buf.next_text_ids
    return {
        "violation_frac": float(np.mean(sq > buf.d_lang + tol)),
        "same_desc_frac": float(np.mean(same)),
        "same_desc_mean_step": float(np.mean(np.sqrt(sq[same]))) if same.any() else 0.0,
    }


def epoch_record(learner: Learner, buf: Buffer, upd: dict) -> dict:
    T = learner.config.env.episode_length
    ret = buf.rewards.reshape(-1, T).sum(axis=1)
    rec = {"epoch": learner.epoch, "lambda": learner.lam, "intrinsic_return": float(ret.mean()), "d_lang_mean": float(buf.d_lang.mean())}
    rec.update(upd)
    rec.update(constraint_stats(learner.phi, buf))
    rec["log_std"] = [float(v) for v in learner.ppo.policy.log_std]
    return rec


def train(
    config: RunConfig,
    log_path=None,
    on_update: Callable[[str], None] | None = None,
    on_epoch: Callable[[Learner, Buffer, dict], None] | None = None,
    space: LanguageSpace | None = None,
    checkpoint: Checkpoint | None = None,
) -> Checkpoint:
    """Run ``config.trainer.epochs`` epochs from ``checkpoint`` (or a fresh init).

    Writes one JSON line per epoch to ``log_path``. On a non-finite loss the
    epoch's buffer is saved next to the log (or in the working directory) and
    the error is re-raised.
    """
    ck = checkpoint or init_checkpoint(config)
    learner = Learner.from_checkpoint(ck)
    env = make_env(config.env)
    space = space or build_language_space(config)
    log = open(log_path, "w") if log_path else None
    try:
        for _ in range(config.trainer.epochs):
            buf = collect_epoch(learner.ppo.policy, learner.phi, env, space, config.trainer.episodes_per_epoch, config.skill.dim, learner.rng,
                                featurize=lambda x: phi_features(config, x))
            try:
                upd = update_epoch(learner, buf, on_update)
            except NonFiniteError:
                dump = Path(log_path).with_name(f"failed_epoch_{learner.epoch}.npz") if log_path else Path(f"failed_epoch_{learner.epoch}.npz")
                buf.save(dump)
                logger.error("non-finite loss in epoch %d; buffer saved to %s", learner.epoch, dump)
                raise
            learner.epoch += 1
            rec = epoch_record(learner, buf, upd)
            if log:
                log.write(json.dumps(rec, sort_keys=True) + "\n")
            if on_epoch:
                on_epoch(learner, buf, rec)
            if learner.epoch % 25 == 0:
                logger.info("epoch %d return %.3f lambda %.2f viol %.3f", learner.epoch, rec["intrinsic_return"], rec["lambda"], rec["violation_frac"])
    finally:
        if log:
            log.close()
    if config.describer.cache_path:
        space.describer.cache.save(config.describer.cache_path)
    return learner.checkpoint()


# downstream goal reaching ----------------------------------------------------

@dataclass
class HierCheckpoint:
    """High-level controller over a frozen skill policy (which is embedded whole)."""

    config: RunConfig
    policy: PolicyParams
    value: Mlp
    low: Checkpoint
    rng_state: dict
    epoch: int = 0
    history: list = field(default_factory=list)
    kind: str = "hier"

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "history": self.history,
            "params": {"pi_high": self.policy.to_dict(), "v_high": self.value.to_dict()},
            "low": self.low.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HierCheckpoint":
        if d.get("version") != CHECKPOINT_VERSION or d.get("kind") != "hier":
            raise ValueError("not a version-1 hierarchical checkpoint")
        p = d["params"]
        return cls(cfgmod.from_dict(d["config"]), PolicyParams.from_dict(p["pi_high"]), Mlp.from_dict(p["v_high"]),
                   Checkpoint.from_dict(d["low"]), d["rng_state"], int(d["epoch"]), list(d["history"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "HierCheckpoint":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_dict(json.loads(p.read_text()))


def load_any(path):
    """Load either checkpoint kind, dispatching on the ``kind`` field."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    d = json.loads(p.read_text())
    return HierCheckpoint.from_dict(d) if d.get("kind") == "hier" else Checkpoint.from_dict(d)


def random_low_level(low: Checkpoint) -> Checkpoint:
    """A freshly initialized skill checkpoint with the same shapes and config as ``low``."""
    return init_checkpoint(low.config)


def sample_goals(config: RunConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    h = config.hier
    return rng.uniform(np.asarray(h.goal_low), np.asarray(h.goal_high), size=(n, 2))


def hier_episodes(policy: PolicyParams, low: Checkpoint, config: RunConfig, goals: np.ndarray, rng: np.random.Generator, deterministic: bool = False, random_high: bool = False):
    """Run one goal-reaching episode per goal row.

    Every ``decision_interval`` low-level steps the controller picks a skill
    ``z = skill_scale * tanh(u)`` from ``[state, goal]``; the frozen skill
    policy then acts with its mean action. An episode ends with reward 1 the
    first time the measured position comes within ``goal_radius`` of the goal.

    Returns the high-level transitions (rows ordered episode-major, time
    within episode) and the per-episode success flags.
    """
    h = config.hier
    env = make_env(low.config.env)
    n = len(goals)
    K = h.decision_interval
    n_dec = -(-env.config.episode_length // K)
    seeds = rng.integers(0, 2**31 - 1, size=n)
    s = env.reset_batch(seeds)
    done = np.linalg.norm(env.position(s) - goals, axis=1) <= h.goal_radius
    success = done.copy()
    rec = {k: [] for k in ("states", "u", "logp", "rewards", "alive")}
    D = low.config.skill.dim
    for _ in range(n_dec):
        alive = ~done
        if random_high:
            u = rng.standard_normal((n, D))
            logp = np.zeros(n)
        else:
            _, logp, u = sample_action(policy, s, goals, rng, deterministic)
        z = h.skill_scale * np.tanh(u)
        reward = np.zeros(n)
        start = s
        for _ in range(K):
            a, _, _ = sample_action(low.policy, s, z, rng, deterministic=True)
            s = np.where(done[:, None], s, env.step(s, a))
            hit = ~done & (np.linalg.norm(env.position(s) - goals, axis=1) <= h.goal_radius)
            reward[hit] = 1.0
            success |= hit
            done |= hit
        for k, v in zip(rec, (start, u, logp, reward, alive)):
            rec[k].append(v)
    st = {k: np.stack(v, axis=1) for k, v in rec.items()}  # (n, n_dec, ...)
    return st, success


def _hier_batch(st: dict, goals: np.ndarray, value: Mlp):
    alive = st["alive"]
    n, n_dec = alive.shape
    ep = np.repeat(np.arange(n), n_dec).reshape(n, n_dec)
    rows = alive.reshape(-1)
    states = st["states"].reshape(n * n_dec, -1)[rows]
    g = np.repeat(goals, n_dec, axis=0)[rows]
    rewards = st["rewards"].reshape(-1)[rows]
    episode = ep.reshape(-1)[rows]
    # the last live decision of each episode ends it (success or time-out)
    dones = np.zeros(len(rewards))
    last = np.r_[episode[1:] != episode[:-1], True]
    dones[last] = 1.0
    values = forward(value, np.concatenate([states, g], axis=1))[:, 0]
    batch = RolloutBatch(states, g, st["u"].reshape(n * n_dec, -1)[rows], st["logp"].reshape(-1)[rows], rewards, values, dones)
    return batch, episode


def train_hier(config: RunConfig, low: Checkpoint, log_path=None, random_high: bool = False) -> HierCheckpoint:
    """PPO on the goal-conditioned high-level controller over a frozen skill checkpoint.

    ``config.hier`` sets the decision interval, goal box and radius, and the
    budget; PPO settings come from ``config.ppo``. Each epoch appends the
    training success rate to ``history`` and, if given, a JSON line to
    ``log_path``. With ``random_high`` the controller is never updated and
    picks skills from ``N(0, I)``.
    """
    rng = np.random.default_rng(config.trainer.seed)
    env = make_env(low.config.env)
    D = low.config.skill.dim
    hidden = config.hidden("policy")
    policy = init_policy(env.state_dim, 2, D, hidden, rng, log_std=config.ppo.log_std_init)
    value = init_value(env.state_dim, 2, hidden, rng)
    st = PpoState.create(policy, value)
    history = []
    log = open(log_path, "w") if log_path else None
    p = config.ppo
    try:
        for epoch in range(config.hier.epochs):
            goals = sample_goals(config, config.hier.episodes_per_epoch, rng)
            rec, success = hier_episodes(st.policy, low, config, goals, rng, random_high=random_high)
            entry = {"epoch": epoch + 1, "success_rate": float(success.mean())}
            if not random_high and rec["alive"].any():
                batch, episode = _hier_batch(rec, goals, st.value)
                prepare_advantages(batch, p.gamma, p.gae_lambda, episode, p.normalize_advantages)
                hist = []
                for _ in range(p.epochs):
                    order = rng.permutation(len(batch))
                    for start in range(0, len(batch), p.minibatch):
                        hist.append(ppo_step(st, batch.subset(order[start:start + p.minibatch]), p.lr, p.clip, p.entropy_coef, p.vf_coef, p.value_lr))
                entry.update({k: float(np.mean([x[k] for x in hist])) for k in hist[0]})
            history.append(entry)
            if log:
                log.write(json.dumps(entry, sort_keys=True) + "\n")
    finally:
        if log:
            log.close()
    return HierCheckpoint(config, st.policy, st.value, low, rng.bit_generator.state, config.hier.epochs, history)


def evaluate_hier(ck: HierCheckpoint, n_episodes: int = 200, seed: int = 0, deterministic: bool = True, random_high: bool = False) -> float:
    """Success rate of the controller on fresh goals."""
    rng = np.random.default_rng(seed)
    goals = sample_goals(ck.config, n_episodes, rng)
    _, success = hier_episodes(ck.policy, ck.low, ck.config, goals, rng, deterministic, random_high)
    return float(success.mean())
