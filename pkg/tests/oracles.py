"""Slow, independent reference implementations used only as test oracles.

They are written with explicit scalar loops and share no code with the
package, so agreement is evidence rather than tautology.
"""
import math


def mlp_forward_scalar(weights, biases, activations, x):
    h = [float(v) for v in x]
    for layer, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for i in range(len(W)):
            acc = float(b[i])
            for j in range(len(h)):
                acc += float(W[i][j]) * h[j]
            out.append(acc)
        if layer < len(weights) - 1:
            act = activations[layer]
            if act == "relu":
                out = [v if v > 0 else 0.0 for v in out]
            elif act == "elu":
                out = [v if v > 0 else math.expm1(v) for v in out]
        h = out
    return h


def adam_scalar(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam over a list of successive gradients; returns the trajectory of p."""
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        if g != 0.0:
            p = p - lr * mh / (math.sqrt(vh) + eps)
        out.append(p)
    return out


def gae_double_loop(rewards, values, dones, gamma, lam, last_value=0.0):
    T = len(rewards)
    deltas = []
    for t in range(T):
        nxt = values[t + 1] if t + 1 < T else last_value
        deltas.append(rewards[t] + gamma * nxt * (1 - dones[t]) - values[t])
    adv = []
    for t in range(T):
        total, w = 0.0, 1.0
        for k in range(t, T):
            total += w * deltas[k]
            if dones[k]:
                break
            w *= gamma * lam
        adv.append(total)
    return adv


def fnv1a_64_reference(data: bytes) -> int:
    h = 14695981039346656037
    for byte in data:
        h ^= byte
        h = (h * 1099511628211) % 2**64
    return h


def all_simple_path_lengths(n, edges):
    """Cheapest simple path between every pair by exhaustive search."""
    adj = {i: {} for i in range(n)}
    for i, j, w in edges:
        if j not in adj[i] or w < adj[i][j]:
            adj[i][j] = w
            adj[j][i] = w
    best = [[math.inf] * n for _ in range(n)]
    for s in range(n):
        best[s][s] = 0.0
        stack = [(s, 0.0, frozenset([s]))]
        while stack:
            node, cost, seen = stack.pop()
            for nxt, w in adj[node].items():
                if nxt in seen:
                    continue
                c = cost + w
                if c < best[s][nxt]:
                    best[s][nxt] = c
                stack.append((nxt, c, seen | {nxt}))
    return best
