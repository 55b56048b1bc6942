"""Self-checks shared by the command line and the test suite.

Each suite returns a JSON-serializable report with an ``ok`` flag; none of
them needs network access or a trained model.
"""
from __future__ import annotations

import numpy as np

from .core_math import forward, grad_check, init_mlp
from .metric_oracle import (
    brute_force_pseudometric,
    cosine_counterexample,
    induced_pseudometric,
    random_graph,
    scale_to_premise,
    verify_claim1,
    verify_pseudometric,
)
from .ppo import PolicyParams, gae, init_policy, sample_action, surrogate
from .skill_core import psi_loss, repr_objective

SUITES = ("metric", "grad", "telescope", "constraint")


def gae_reference(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0) -> np.ndarray:
    """Advantages as explicit discounted sums of TD errors (quadratic time)."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    T = len(r)
    nxt = np.append(v[1:], last_value)
    delta = r + gamma * nxt * (1.0 - d) - v
    adv = np.zeros(T)
    for t in range(T):
        total, w = 0.0, 1.0
        for k in range(t, T):
            total += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        adv[t] = total
    return adv


def metric_suite(n_graphs: int = 100, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    failures = []
    for g in range(n_graphs):
        graph = random_graph(int(rng.integers(2, 13)), rng)
        d = induced_pseudometric(graph)
        if not np.array_equal(d, brute_force_pseudometric(graph)):
            failures.append({"graph": g, "kind": "brute_force_mismatch"})
        if not verify_pseudometric(d).ok:
            failures.append({"graph": g, "kind": "not_a_pseudometric"})
    claim_checked = 0
    for g in range(n_graphs):
        graph = random_graph(int(rng.integers(2, 13)), rng)
        phi = scale_to_premise(graph, rng.standard_normal((graph.n_nodes, 2)))
        rep = verify_claim1(graph, phi)
        claim_checked += rep.checked
        if not rep.ok:
            failures.append({"graph": g, "kind": "claim", "status": rep.status})
    _, ce = cosine_counterexample()
    ce_ok = (ce["ab"], ce["bc"], ce["ac"]) == (0.5, 0.5, 1.5)
    if not ce_ok:
        failures.append({"kind": "counterexample", "values": ce})
    return {"suite": "metric", "ok": not failures, "graphs": n_graphs, "claim_pairs_checked": claim_checked, "counterexample": ce, "failures": failures}


def grad_suite(seed: int = 0) -> dict:
    """Central-difference checks of every hand-written gradient."""
    rng = np.random.default_rng(seed)
    errors = {}

    net = init_mlp([3, 5, 4, 2], "elu", rng)
    x = rng.standard_normal((6, 3))
    target = rng.standard_normal((6, 2))

    def mlp_f(arrays):
        from .core_math import forward_backward

        m = net.with_arrays(arrays)
        out, g, _ = forward_backward(m, x, lambda o: o - target)
        return 0.5 * float(np.sum((out - target) ** 2)), g.arrays()

    errors["mlp"] = grad_check(mlp_f, net.arrays())

    phi = init_mlp([2, 6, 2], "relu", rng)
    s = rng.uniform(-1, 1, (8, 2))
    s2 = s + rng.normal(0, 0.2, (8, 2))
    z = rng.standard_normal((8, 2))
    # language distances chosen so that some pairs sit on each side of the penalty kink
    dl = np.sum((forward(phi, s2) - forward(phi, s)) ** 2, axis=1) * rng.choice([0.5, 2.0], size=8)
    errors["repr_objective"] = grad_check(lambda a: repr_objective(phi.with_arrays(a), 3.0, 1e-3, s, s2, z, dl), phi.arrays())

    pol = init_policy(2, 2, 2, [8], rng, log_std=-0.3)
    pol = PolicyParams(init_mlp([4, 8, 2], "elu", rng), pol.log_std)
    st = rng.uniform(-1, 1, (10, 2))
    zz = rng.standard_normal((10, 2))
    _, logp_old, u = sample_action(pol, st, zz, rng)
    adv = rng.standard_normal(10)
    # shift old log-probs so every ratio sits well inside the clip range
    logp_old = logp_old + rng.uniform(-0.05, 0.05, 10)
    errors["ppo_surrogate"] = grad_check(lambda a: surrogate(pol.with_arrays(a), st, zz, u, logp_old, adv, 0.2, 1e-2)[:2], pol.arrays())

    psi = init_mlp([5, 6, 2], "relu", rng)
    e = rng.standard_normal((7, 5))
    zt = rng.standard_normal((7, 2))
    errors["psi_mse"] = grad_check(lambda a: psi_loss(psi.with_arrays(a), e, zt), psi.arrays())

    T = 64
    r = rng.standard_normal(T)
    v = rng.standard_normal(T)
    dn = (rng.random(T) < 0.1).astype(float)
    fast, _ = gae(r, v, dn, 0.99, 0.95)
    gae_err = float(np.max(np.abs(fast - gae_reference(r, v, dn, 0.99, 0.95))))
    worst = max(errors.values())
    return {"suite": "grad", "ok": bool(worst < 1e-4 and gae_err <= 1e-10), "max_rel_error": worst, "rel_errors": errors, "gae_max_abs_error": gae_err}


def telescope_suite(checkpoint=None, n_episodes: int = 100, seed: int = 0, tol: float = 1e-9) -> dict:
    """Summed per-step rewards against the end-to-end latent displacement."""
    from .config import RunConfig
    from .env import make_env
    from .trainer import init_checkpoint, phi_features, rollout

    ck = checkpoint or init_checkpoint(RunConfig())
    cfg = ck.config
    env = make_env(cfg.env)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_episodes, cfg.skill.dim))
    states, *_ = rollout(ck.policy, env, z, rng.integers(0, 2**31 - 1, size=n_episodes), rng)
    f = phi_features(cfg, states)
    lat = forward(ck.phi, f.reshape(-1, f.shape[-1])).reshape(*states.shape[:2], -1)
    per_step = np.sum((lat[1:] - lat[:-1]) * z[None], axis=-1)
    total = per_step.sum(axis=0)
    direct = np.sum((lat[-1] - lat[0]) * z, axis=-1)
    gap = float(np.max(np.abs(total - direct)))
    return {"suite": "telescope", "ok": gap <= tol, "episodes": n_episodes, "max_abs_gap": gap, "tol": tol}


def constraint_suite(checkpoint=None, seed: int = 0, steps: int = 500) -> dict:
    """With a checkpoint: violation statistics on a fresh epoch of its own rollouts.

    Without one: alternating representation and multiplier updates on a fixed
    feasible synthetic batch must drive the violation fraction down.
    """
    from .core_math import AdamState
    from .skill_core import dual_update, init_phi, phi_update, slack

    if checkpoint is not None:
        from .env import make_env
        from .trainer import build_language_space, collect_epoch, constraint_stats, phi_features

        cfg = checkpoint.config
        rng = np.random.default_rng(seed)
        buf = collect_epoch(checkpoint.policy, checkpoint.phi, make_env(cfg.env), build_language_space(cfg), cfg.trainer.episodes_per_epoch,
                            cfg.skill.dim, rng, featurize=lambda x: phi_features(cfg, x))
        stats = constraint_stats(checkpoint.phi, buf)
        ok = stats["violation_frac"] <= 0.05 and stats["same_desc_mean_step"] <= 1e-2
        return {"suite": "constraint", "ok": ok, **stats}

    rng = np.random.default_rng(seed)
    n = 256
    s = rng.uniform(-1, 1, (n, 2))
    s2 = s + rng.normal(0, 0.05, (n, 2))
    z = rng.standard_normal((n, 2))
    d = np.minimum(np.linalg.norm(s2 - s, axis=1) ** 2 * 4.0, 2.0)
    phi = init_phi(2, 2, [32, 32], rng)
    # start well outside the feasible set
    phi = phi.with_arrays([a * 3.0 for a in phi.arrays()])
    opt = AdamState.zeros_like(phi.arrays())
    lam = 300.0
    trace = []
    for _ in range(steps):
        phi, opt, _ = phi_update(phi, opt, lam, 1e-3, s, s2, z, d, 1e-3)
        sl = slack(phi, s, s2, d)
        lam = dual_update(lam, 1e-3, sl, 0.01)
        trace.append(float(np.mean(np.sum((forward(phi, s2) - forward(phi, s)) ** 2, axis=1) > d + 1e-6)))
    windows = [float(np.mean(trace[i:i + 50])) for i in range(0, steps, 50)]
    # non-increasing across windows (plateaus allowed) and strictly lower at the end
    monotone = all(b <= a + 1e-12 for a, b in zip(windows, windows[1:]))
    ok = monotone and windows[-1] < windows[0]
    return {"suite": "constraint", "ok": ok, "violation_windows": windows, "lambda": lam}


def run_suite(name: str, checkpoint=None, seed: int = 0) -> dict:
    if name == "metric":
        return metric_suite(seed=seed)
    if name == "grad":
        return grad_suite(seed=seed)
    if name == "telescope":
        return telescope_suite(checkpoint, seed=seed)
    if name == "constraint":
        return constraint_suite(checkpoint, seed=seed)
    raise ValueError(f"unknown suite {name!r}; choose from {SUITES}")


__all__ = ["SUITES", "constraint_suite", "gae_reference", "grad_suite", "metric_suite", "run_suite", "telescope_suite"]
