"""Dense MLPs with hand-written backprop, Adam, and a finite-difference checker.

Everything here runs in float64. Parameters are immutable snapshots: every
update returns new arrays, so a snapshot handed to a rollout worker is never
mutated underneath it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("relu", "elu", "linear")


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Mlp:
    """Layer stack ``(W, b)`` with one activation tag per hidden layer.

    ``W`` has shape ``(out, in)``. The output layer is always linear.
    """

    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) < 1:
            raise ShapeError("weights and biases must be non-empty and of equal length")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("need exactly one activation per hidden layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: W {w.shape} / b {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input width {w.shape[1]} != {self.weights[i - 1].shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "Mlp":
        return Mlp(tuple(arrays[0::2]), tuple(arrays[1::2]), self.activations)

    def to_dict(self) -> dict:
        return {
            "activations": list(self.activations),
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        ws = tuple(np.asarray(layer["W"], dtype=np.float64) for layer in d["layers"])
        bs = tuple(np.asarray(layer["b"], dtype=np.float64) for layer in d["layers"])
        return cls(ws, bs, tuple(d["activations"]))


def init_mlp(sizes: Sequence[int], activation: str, rng: np.random.Generator) -> Mlp:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``, zero biases."""
    if len(sizes) < 2:
        raise ShapeError("need at least input and output sizes")
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return Mlp(tuple(ws), tuple(bs), (activation,) * (len(sizes) - 2))


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "elu":
        return np.where(h > 0.0, h, np.expm1(np.minimum(h, 0.0)))
    return h


def _act_grad(name: str, h: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0 for relu
    if name == "relu":
        return (h > 0.0).astype(np.float64)
    if name == "elu":
        return np.where(h > 0.0, 1.0, np.exp(np.minimum(h, 0.0)))
    return np.ones_like(h)


def _as_batch(params: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match input width {params.in_dim}")
    return x2, single


def forward(params: Mlp, x) -> np.ndarray:
    """Evaluate the network on one vector ``(in,)`` or a batch ``(n, in)``."""
    h, single = _as_batch(params, x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = _act(params.activations[i], h)
    return h[0] if single else h


def _forward_cache(params: Mlp, x2: np.ndarray):
    inputs, pre = [], []
    h = x2
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = _act(params.activations[i], z) if i < last else z
    return h, inputs, pre


def forward_backward(params: Mlp, x, upstream_fn):
    """Forward pass, then backprop ``upstream_fn(output)``.

    Saves a second forward pass when the upstream gradient depends on the
    output (every loss in this package).
    """
    x2, single = _as_batch(params, x)
    out, inputs, pre = _forward_cache(params, x2)
    up = np.asarray(upstream_fn(out[0] if single else out), dtype=np.float64)
    grads, dx = _backprop(params, inputs, pre, up[None, :] if single else up)
    return out[0] if single else out, grads, (dx[0] if single else dx)


def backward(params: Mlp, x, upstream) -> tuple[Mlp, np.ndarray]:
    """Gradient of ``sum(upstream * forward(params, x))``.

    Returns ``(grads, dx)`` where ``grads`` is an :class:`Mlp` whose arrays
    mirror ``params`` and ``dx`` matches the shape of ``x``. Batched inputs
    accumulate parameter gradients over the batch.
    """
    x2, single = _as_batch(params, x)
    up = np.asarray(upstream, dtype=np.float64)
    up2 = up[None, :] if up.ndim == 1 else up
    if up2.shape != (x2.shape[0], params.out_dim):
        raise ShapeError(f"upstream shape {up.shape} does not match output ({x2.shape[0]}, {params.out_dim})")
    _, inputs, pre = _forward_cache(params, x2)
    grads, dx = _backprop(params, inputs, pre, up2)
    return grads, (dx[0] if single else dx)


def _backprop(params: Mlp, inputs, pre, up):
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    delta = up
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            delta = delta * _act_grad(params.activations[i], pre[i])
        gw[i] = delta.T @ inputs[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    return Mlp(tuple(gw), tuple(gb), params.activations), delta


@dataclass(frozen=True)
class AdamState:
    m: tuple
    v: tuple
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls(tuple(np.zeros_like(a) for a in arrays), tuple(np.zeros_like(a) for a in arrays), 0)

    def to_dict(self) -> dict:
        return {"m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v], "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(
            tuple(np.asarray(a, dtype=np.float64) for a in d["m"]),
            tuple(np.asarray(a, dtype=np.float64) for a in d["v"]),
            int(d["step"]),
        )


def opt_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam descent step with bias correction.

    A tensor whose gradient is identically zero keeps its value (its moments
    still decay), so a zero gradient never moves parameters regardless of the
    accumulated state.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f"gradient {i} has shape {g.shape}, expected {params[i].shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"gradient tensor {i} {g.shape} has {bad} non-finite entries")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        if np.any(g):
            p = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(tuple(new_m), tuple(new_v), t)


def grad_check(
    f: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
    params: Sequence[np.ndarray],
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst elementwise relative error between analytic and central-difference gradients.

    ``f`` maps a list of arrays to ``(value, gradient_list)``. The relative
    error of one entry is ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_entries`` only a random subset of entries (per tensor) is probed.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [np.array(p, dtype=np.float64, copy=True) for p in params]
    _, analytic = f(params)
    worst = 0.0
    for k, p in enumerate(params):
        flat_idx = np.arange(p.size)
        if max_entries is not None and p.size > max_entries:
            flat_idx = (rng or np.random.default_rng(0)).choice(p.size, size=max_entries, replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, p.shape)
            orig = p[idx]
            p[idx] = orig + step
            fp = f(params)[0]
            p[idx] = orig - step
            fm = f(params)[0]
            p[idx] = orig
            num = (fp - fm) / (2.0 * step)
            a = analytic[k][idx]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
