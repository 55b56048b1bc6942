import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lgsd.core_math import AdamState, Mlp, forward, grad_check, init_mlp
from lgsd.embed import HashingEmbedder
from lgsd.skill_core import (
    dual_update,
    infer_skill,
    init_phi,
    init_psi,
    intrinsic_reward,
    phi_inputs,
    phi_update,
    psi_loss,
    psi_update,
    repr_objective,
    slack,
)

seeds = st.integers(0, 2**32 - 1)


def identity2():
    return Mlp((np.eye(2),), (np.zeros(2),), ())


def test_reward_linear_phi_hand_value():
    r = intrinsic_reward(identity2(), [[0.0, 0.0]], [[0.5, -0.25]], [[2.0, 4.0]])
    assert r[0] == 0.0


@given(seeds, st.integers(1, 60))
def test_rewards_telescope(seed, T):
    rng = np.random.default_rng(seed)
    phi = init_phi(2, 3, [16, 16], rng)
    traj = np.cumsum(rng.normal(0, 0.05, (T + 1, 2)), axis=0)
    z = rng.standard_normal(3)
    total = intrinsic_reward(phi, traj[:-1], traj[1:], z).sum()
    direct = (forward(phi, traj[-1]) - forward(phi, traj[0])) @ z
    assert abs(total - direct) <= 1e-9


def test_objective_hand_value():
    val, _ = repr_objective(identity2(), 1.0, 1e-3, [[0.0, 0.0]], [[1.0, 0.0]], [[2.0, 0.0]], [0.5])
    assert val == pytest.approx(1.5, abs=1e-15)


def test_objective_penalty_capped_at_eps():
    val, grads = repr_objective(identity2(), 7.0, 1e-3, [[0.0, 0.0]], [[0.1, 0.0]], [[0.0, 0.0]], [1.0])
    assert val == pytest.approx(7e-3, abs=1e-15)
    # slack above eps: the penalty is flat, and z = 0 leaves no gradient at all
    for g in grads:
        np.testing.assert_array_equal(g, np.zeros_like(g))


@pytest.mark.parametrize("seed", range(10))
def test_objective_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    phi = init_phi(2, 2, [6], rng)
    s = rng.uniform(-1, 1, (8, 2))
    s2 = s + rng.normal(0, 0.2, (8, 2))
    z = rng.standard_normal((8, 2))
    sq = np.sum((forward(phi, s2) - forward(phi, s)) ** 2, axis=1)
    d = sq * rng.choice([0.5, 2.0], size=8)
    assert grad_check(lambda a: repr_objective(phi.with_arrays(a), 3.0, 1e-3, s, s2, z, d), phi.arrays()) < 1e-5


def test_slack_sign():
    sl = slack(identity2(), [[0.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [0.1, 0.0]], [0.5, 0.5])
    assert sl[0] < 0 < sl[1]


@given(st.floats(0, 1000), st.lists(st.floats(-5, 5), min_size=1, max_size=20), st.floats(1e-4, 1))
def test_dual_update_never_negative(lam, slacks, lr):
    assert dual_update(lam, 1e-3, np.array(slacks), lr) >= 0.0


def test_dual_update_direction():
    assert dual_update(10.0, 1e-3, np.array([-1.0]), 0.1) == pytest.approx(10.1)
    assert dual_update(10.0, 1e-3, np.array([5.0]), 0.1) == pytest.approx(10.0 - 1e-4)
    assert dual_update(0.0, 1e-3, np.array([5.0]), 0.1) == 0.0
    with pytest.raises(ValueError):
        dual_update(1.0, 1e-3, np.array([1.0]), 0.0)


def test_phi_update_ascends_when_feasible():
    rng = np.random.default_rng(0)
    phi = init_phi(2, 2, [16], rng)
    opt = AdamState.zeros_like(phi.arrays())
    s = rng.uniform(-1, 1, (64, 2))
    s2 = s + 0.05
    z = rng.standard_normal((64, 2))
    d = np.full(64, 10.0)
    v0, _ = repr_objective(phi, 1.0, 1e-3, s, s2, z, d)
    for _ in range(20):
        phi, opt, _ = phi_update(phi, opt, 1.0, 1e-3, s, s2, z, d, 1e-3)
    assert repr_objective(phi, 1.0, 1e-3, s, s2, z, d)[0] > v0


def test_psi_loss_zero_for_exact_fit_and_gradient():
    psi = Mlp((np.array([[1.0, 0.0, 2.0], [0.0, -1.0, 0.5]]),), (np.zeros(2),), ())
    e = np.array([[1.0, 2.0, 3.0]])
    assert psi_loss(psi, e, forward(psi, e))[0] == 0.0
    rng = np.random.default_rng(1)
    net = init_psi(5, 2, [7], rng)
    E, Z = rng.standard_normal((9, 5)), rng.standard_normal((9, 2))
    assert grad_check(lambda a: psi_loss(net.with_arrays(a), E, Z), net.arrays()) < 1e-5


def test_psi_update_reduces_loss():
    rng = np.random.default_rng(2)
    net = init_psi(5, 2, [16], rng)
    opt = AdamState.zeros_like(net.arrays())
    E, Z = rng.standard_normal((32, 5)), rng.standard_normal((32, 2))
    l0 = psi_loss(net, E, Z)[0]
    for _ in range(50):
        net, opt, _ = psi_update(net, opt, E, Z, 1e-2)
    assert psi_loss(net, E, Z)[0] < l0


def test_infer_skill_normalized():
    rng = np.random.default_rng(3)
    emb = HashingEmbedder(n_features=32).fit()
    psi = init_psi(32, 2, [8], rng)
    z = infer_skill(psi, "The robot's x, y position is [0.30, 0.20]", emb, normalize=True)
    assert np.linalg.norm(z) == pytest.approx(1.0, abs=1e-9)
    raw = infer_skill(psi, "The robot's x, y position is [0.30, 0.20]", emb, normalize=False)
    np.testing.assert_allclose(z, raw / np.linalg.norm(raw))


def test_infer_skill_zero_vector_cannot_normalize():
    psi = Mlp((np.zeros((2, 32)),), (np.zeros(2),), ())
    with pytest.raises(ValueError):
        infer_skill(psi, "anything", HashingEmbedder(n_features=32).fit())


def test_phi_inputs_modes():
    x = np.array([[0.07, -0.02], [0.075, -0.125]])
    np.testing.assert_allclose(phi_inputs(x, 0.05), [[0.05, 0.0], [0.1, -0.15]], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(phi_inputs(x, 0.05, "raw"), x)
    with pytest.raises(ValueError):
        phi_inputs(x, 0.05, "grid")


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_snapping_is_idempotent(x, y):
    once = phi_inputs([[x, y]], 0.05)
    np.testing.assert_array_equal(phi_inputs(once, 0.05), once)


def test_moves_inside_a_cell_earn_nothing():
    phi = init_mlp([2, 8, 2], "relu", np.random.default_rng(0))
    a, b = phi_inputs([[0.301, 0.29]], 0.05), phi_inputs([[0.31, 0.305]], 0.05)
    assert intrinsic_reward(phi, a, b, [[1.0, -1.0]])[0] == 0.0
