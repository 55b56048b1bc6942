"""Shortest-path pseudometric over adjacent state pairs, plus axiom checkers.

Raw cosine language distance is symmetric and zero on the diagonal but can
break the triangle inequality. Summing it along adjacency paths and taking
the cheapest path gives a proper pseudometric; a representation that is
1-Lipschitz on every edge is then 1-Lipschitz under that pseudometric on
every connected pair. The functions here check both facts numerically.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class AdjacencyGraph:
    n_nodes: int
    edges: list  # (i, j, w), undirected
    nodes: list | None = None

    def __post_init__(self):
        for i, j, w in self.edges:
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            if w < 0:
                raise ValueError(f"negative edge weight {w} on ({i}, {j})")
            if i == j and w > 0:
                raise ValueError(f"self-loop on {i} with positive weight")

    @classmethod
    def from_json(cls, path) -> "AdjacencyGraph":
        d = json.loads(Path(path).read_text())
        nodes = d["nodes"]
        return cls(len(nodes), [(int(i), int(j), float(w)) for i, j, w in d["edges"]], nodes)

    def weight_matrix(self) -> np.ndarray:
        w = np.full((self.n_nodes, self.n_nodes), np.inf)
        np.fill_diagonal(w, 0.0)
        for i, j, c in self.edges:
            if c < w[i, j]:
                w[i, j] = w[j, i] = c
        return w


def induced_pseudometric(graph: AdjacencyGraph) -> np.ndarray:
    """All-pairs cheapest path lengths (Floyd-Warshall); ``inf`` where disconnected."""
    d = graph.weight_matrix()
    for k in range(graph.n_nodes):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def brute_force_pseudometric(graph: AdjacencyGraph) -> np.ndarray:
    """Exhaustive simple-path enumeration. Exponential; use on small graphs only."""
    n = graph.n_nodes
    w = graph.weight_matrix()
    nbrs = [[j for j in range(n) if j != i and np.isfinite(w[i, j])] for i in range(n)]
    best = np.full((n, n), np.inf)
    np.fill_diagonal(best, 0.0)

    def walk(src, node, cost, seen):
        for nxt in nbrs[node]:
            if nxt in seen:
                continue
            c = cost + w[node, nxt]
            if c < best[src, nxt]:
                best[src, nxt] = c
            seen.add(nxt)
            walk(src, nxt, c, seen)
            seen.remove(nxt)

    for s in range(n):
        walk(s, s, 0.0, {s})
    return best


@dataclass
class Report:
    ok: bool
    violations: list = field(default_factory=list)
    checked: int = 0
    status: str = "ok"

    def to_dict(self) -> dict:
        return {"ok": self.ok, "status": self.status, "checked": self.checked, "violations": self.violations[:50], "n_violations": len(self.violations)}


def verify_pseudometric(d, tol: float = 1e-12) -> Report:
    """Check zero diagonal, symmetry, and the triangle inequality on finite triples."""
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    viol = []
    for i in range(n):
        if d[i, i] != 0.0:
            viol.append({"kind": "diagonal", "i": i, "value": float(d[i, i])})
    both = np.isfinite(d) & np.isfinite(d.T)
    asym = np.abs(np.where(both, d, 0.0) - np.where(both, d.T, 0.0)) > tol
    for i, j in zip(*np.nonzero(asym)):
        if i < j:
            viol.append({"kind": "symmetry", "i": int(i), "j": int(j)})
    for i, j in zip(*np.nonzero(np.isfinite(d) != np.isfinite(d.T))):
        if i < j:
            viol.append({"kind": "symmetry", "i": int(i), "j": int(j)})
    # d[x, y] <= d[x, z] + d[z, y] for every z; inf on the right makes it vacuous
    for z in range(n):
        via = d[:, z:z + 1] + d[z:z + 1, :]
        bad = np.isfinite(via) & (d > via + tol)
        for x, y in zip(*np.nonzero(bad)):
            viol.append({"kind": "triangle", "x": int(x), "y": int(y), "z": z, "direct": float(d[x, y]), "via": float(via[x, y])})
    return Report(not viol, viol, checked=n**3, status="ok" if not viol else "violated")


def verify_claim1(graph: AdjacencyGraph, phi_values, tol: float = 1e-12) -> Report:
    """Edge-wise Lipschitz premise implies the all-pairs bound under the induced pseudometric.

    A premise failure is reported as ``status="premise violated"`` and is not
    a counterexample to the implication.
    """
    phi = np.asarray(phi_values, dtype=np.float64)
    if phi.shape[0] != graph.n_nodes:
        raise ValueError("need one latent vector per node")
    broken = []
    for i, j, w in graph.edges:
        gap = float(np.linalg.norm(phi[i] - phi[j]))
        if gap > w + tol:
            broken.append({"i": i, "j": j, "gap": gap, "weight": w})
    if broken:
        return Report(False, broken, checked=len(graph.edges), status="premise violated")
    d = induced_pseudometric(graph)
    gaps = np.linalg.norm(phi[:, None, :] - phi[None, :, :], axis=-1)
    bad = np.isfinite(d) & (gaps > d + tol)
    viol = [{"x": int(x), "y": int(y), "gap": float(gaps[x, y]), "bound": float(d[x, y])} for x, y in zip(*np.nonzero(bad))]
    return Report(not viol, viol, checked=int(np.isfinite(d).sum()), status="ok" if not viol else "claim violated")


def random_graph(n: int, rng: np.random.Generator, p_edge: float = 0.35, max_weight: float = 2.0, resolution: float | None = 2.0**-10) -> AdjacencyGraph:
    """Erdos-Renyi graph with uniform weights.

    Weights are rounded to multiples of ``resolution`` (a power of two by
    default) so every path sum is exact in floating point and different
    summation orders agree bit for bit. ``None`` keeps full precision.
    """
    edges = []
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p_edge:
            w = float(rng.uniform(0.0, max_weight))
            edges.append((i, j, round(w / resolution) * resolution if resolution else w))
    return AdjacencyGraph(n, edges)


def scale_to_premise(graph: AdjacencyGraph, phi) -> np.ndarray:
    """Shrink ``phi`` about its mean until every edge satisfies the Lipschitz premise."""
    phi = np.asarray(phi, dtype=np.float64)
    ratios = [w / g for i, j, w in graph.edges if (g := np.linalg.norm(phi[i] - phi[j])) > 0]
    scale = min([1.0] + ratios)
    center = phi.mean(axis=0)
    return center + (phi - center) * scale * (1.0 - 1e-9)


def cosine_counterexample() -> tuple[np.ndarray, dict]:
    """Three vectors whose cosine distances (0.5, 0.5, 1.5) break the triangle inequality.

    Integer entries and norms of exactly 2 keep every cosine an exact binary
    fraction, so the distances come out exact rather than to within rounding.
    """
    vecs = np.array([[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, -1.0], [0.0, 0.0, 0.0, -2.0]])
    norms = np.linalg.norm(vecs, axis=1)
    d = 1.0 - (vecs @ vecs.T) / np.outer(norms, norms)
    np.fill_diagonal(d, 0.0)
    return d, {"ab": float(d[0, 1]), "bc": float(d[1, 2]), "ac": float(d[0, 2])}
