"""Intrinsic reward, the language-Lipschitz representation, its multiplier, and skill inference."""
from __future__ import annotations

import numpy as np

from .core_math import AdamState, Mlp, NonFiniteError, ShapeError, forward, forward_backward, init_mlp, opt_step


def init_phi(state_dim: int, skill_dim: int, hidden, rng, activation: str = "relu") -> Mlp:
    return init_mlp([state_dim, *hidden, skill_dim], activation, rng)


def init_psi(embed_dim: int, skill_dim: int, hidden, rng, activation: str = "relu") -> Mlp:
    return init_mlp([embed_dim, *hidden, skill_dim], activation, rng)


PHI_INPUTS = ("snapped", "raw")


def phi_inputs(states, rho: float, mode: str = "snapped") -> np.ndarray:
    """What the representation sees: the raw state, or the centre of its description cell.

    Snapping makes every move inside one cell an exact zero step, which a
    smooth network cannot otherwise achieve while still varying across cells.
    """
    states = np.asarray(states, dtype=np.float64)
    if mode == "raw":
        return states
    if mode != "snapped":
        raise ValueError(f"unknown phi input mode {mode!r}; expected one of {PHI_INPUTS}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    q = states / rho
    return np.sign(q) * np.floor(np.abs(q) + 0.5 + 1e-9) * rho


def sample_skills(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def intrinsic_reward(phi: Mlp, s, s_next, z) -> np.ndarray:
    """``(phi(s') - phi(s)) . z`` per row, unscaled."""
    delta = forward(phi, s_next) - forward(phi, s)
    return np.sum(delta * np.asarray(z, dtype=np.float64), axis=-1)


def slack(phi: Mlp, s, s_next, d_lang) -> np.ndarray:
    """``d_lang - |phi(s) - phi(s')|^2``; negative where the constraint is violated."""
    delta = forward(phi, s_next) - forward(phi, s)
    return np.asarray(d_lang) - np.sum(delta * delta, axis=-1)


def repr_objective(phi: Mlp, lam: float, eps: float, s, s_next, z, d_lang):
    """Batch mean of ``dphi.z + lam * min(eps, d_lang - |dphi|^2)`` and its gradient.

    The penalty uses the squared latent step. Returns ``(value, grads)`` with
    ``grads`` aligned to ``phi.arrays()`` (ascent direction).
    """
    s = np.atleast_2d(s)
    s_next = np.atleast_2d(s_next)
    z = np.atleast_2d(z)
    d_lang = np.asarray(d_lang, dtype=np.float64)
    n = len(s)
    both = np.concatenate([s, s_next], axis=0)
    cache = {}

    def upstream(out):
        delta = out[n:] - out[:n]
        sl = d_lang - np.sum(delta * delta, axis=1)
        active = sl < eps
        g_delta = (z + np.where(active, -2.0 * lam, 0.0)[:, None] * delta) / n
        cache.update(delta=delta, slack=sl)
        return np.concatenate([-g_delta, g_delta], axis=0)

    _, grads, _ = forward_backward(phi, both, upstream)
    delta, sl = cache["delta"], cache["slack"]
    value = float(np.mean(np.sum(delta * z, axis=1) + lam * np.minimum(eps, sl)))
    return value, grads.arrays()


def dual_update(lam: float, eps: float, slacks, lr_dual: float) -> float:
    """Projected gradient step on ``lam * E[min(eps, slack)]``."""
    if lr_dual <= 0:
        raise ValueError("lr_dual must be positive")
    return max(0.0, float(lam - lr_dual * np.mean(np.minimum(eps, slacks))))


def psi_loss(psi: Mlp, embeddings, skills):
    """Mean squared error between ``psi(e)`` and ``z`` (mean over all entries) and its gradient."""
    e = np.atleast_2d(embeddings)
    z = np.atleast_2d(skills)
    if e.shape[1] != psi.in_dim or z.shape[1] != psi.out_dim:
        raise ShapeError(f"psi expects ({psi.in_dim}) -> ({psi.out_dim}), got {e.shape[1]} -> {z.shape[1]}")
    size = z.size
    pred, grads, _ = forward_backward(psi, e, lambda out: 2.0 * (out - z) / size)
    return float(np.mean((pred - z) ** 2)), grads.arrays()


def psi_update(psi: Mlp, opt: AdamState, embeddings, skills, lr: float):
    """One Adam step on the psi regression; returns ``(psi', opt', loss)``."""
    loss, grads = psi_loss(psi, embeddings, skills)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite psi loss")
    arrays, opt = opt_step(psi.arrays(), grads, opt, lr)
    return psi.with_arrays(arrays), opt, loss


def phi_update(phi: Mlp, opt: AdamState, lam: float, eps: float, s, s_next, z, d_lang, lr: float):
    """One Adam ascent step on :func:`repr_objective`; returns ``(phi', opt', value)``."""
    value, grads = repr_objective(phi, lam, eps, s, s_next, z, d_lang)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite representation objective")
    arrays, opt = opt_step(phi.arrays(), [-g for g in grads], opt, lr)
    return phi.with_arrays(arrays), opt, value


def infer_skill(psi: Mlp, goal_text: str, embedder, normalize: bool = True) -> np.ndarray:
    """Skill for a goal sentence: ``psi(embed(text))``, optionally unit-normalized."""
    z = forward(psi, embedder.embed(goal_text))
    if normalize:
        norm = np.linalg.norm(z)
        if norm == 0.0:
            raise ValueError("inferred skill is the zero vector; cannot normalize")
        z = z / norm
    return z
