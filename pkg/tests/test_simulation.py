"""Trajectory simulation, costs, level-set membership and the certificate checkers."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import gains_from, scalar_system
from fuzzy_lsmpc.errors import DisturbanceBoundViolation
from fuzzy_lsmpc.lmi_synthesis import SynthesisHyperparams
from fuzzy_lsmpc.simulation import (
    CustomDisturbance,
    UniformBallDisturbance,
    default_initial_state,
    input_violations,
    razumikhin_values,
    rpi_membership,
    settling_step,
    simulate,
    stage_cost,
    total_cost,
    verify_iss_decrease,
    verify_rpi_montecarlo,
    verify_terminal_decrease,
)


def _scalar_hp(Q=0.0, tau=1.0):
    return SynthesisHyperparams.uniform(1, lam=0.5, X=[np.eye(1)], tau=tau, Q=Q * np.eye(1), R=np.eye(1))


def test_zero_trajectory(ex1):
    g = gains_from([[[-0.3, 0.1], [0.2, -0.4]]] * 3, X=[np.eye(2)] * 3)
    traj = simulate(ex1, g, ex1.zero_state(), UniformBallDisturbance(0, scale=0.0), steps=10)
    for i in range(3):
        np.testing.assert_array_equal(traj.x[i], 0.0)
    J, total = total_cost(traj, g)
    np.testing.assert_array_equal(J, 0.0)
    assert verify_iss_decrease(traj, g, _ex1_like_hp()).passed


def _ex1_like_hp():
    return SynthesisHyperparams.uniform(3, lam=0.5, X=[np.eye(2)] * 3, Q=np.eye(2))


def test_geometric_decay():
    sys = scalar_system(a=1.0, b=1.0)
    traj = simulate(sys, gains_from([[[-0.5]]]), [np.array([1.0])], steps=20)
    np.testing.assert_allclose(traj.states(0)[:, 0], 0.5 ** np.arange(21), rtol=0, atol=1e-12)


def test_stage_cost_examples():
    Q, R = np.diag([5.0, 5.0]), np.eye(1)
    assert stage_cost(np.zeros(2), np.zeros(1), np.zeros(1), Q, R, 1.0) == 0.0
    assert stage_cost([1.0, 0.0], [0.0], [0.0], Q, R, 1.0) == 5.0
    assert stage_cost(np.zeros(2), [0.0], [1.0], Q, R, 1.0) == -1.0


def test_rpi_membership_examples():
    assert rpi_membership([0.0], [0.0], np.eye(1), 1.0) == (True, 0.0)
    assert rpi_membership([2.0], [0.0], np.eye(1), 1.0) == (False, 4.0)
    inside, v = rpi_membership([1.0], [0.5], np.eye(1), 1.0)
    assert inside and v == 1.0


def test_razumikhin_constant_and_decaying():
    sys = scalar_system(a=1.0, b=0.0)
    g = gains_from([[[0.0]]], X=[np.eye(1)])
    traj = simulate(sys, g, [np.array([1.0])], steps=5)
    V, Vbar = razumikhin_values(traj, np.eye(1), 1.0, 0)
    np.testing.assert_array_equal(V, Vbar)
    sys = scalar_system(a=1.0, b=1.0)
    traj = simulate(sys, gains_from([[[-0.5]]], X=[np.eye(1)]), [np.array([1.0])], steps=5)
    V, Vbar = razumikhin_values(traj, np.eye(1), 1.0, 0)
    np.testing.assert_allclose(Vbar[1:], V[:-1])


def test_total_cost_one_step():
    sys = scalar_system(a=1.0, b=1.0, w=1.0)
    g = gains_from([[[-0.5]]], X=[2.0 * np.eye(1)], sigma=[0.5])
    traj = simulate(sys, g, [np.array([1.0])], CustomDisturbance([[[0.2]]]), steps=1,
                    hp=_scalar_hp(Q=3.0, tau=2.0))
    x0, u0, d0 = 1.0, -0.5, 0.2
    x1 = x0 + u0 + d0
    J, _ = total_cost(traj, g)
    hand = 3.0 * x0 ** 2 + u0 ** 2 - 2.0 * d0 ** 2 + x1 * 2.0 * x1 / 0.5
    assert J[0, -1] == pytest.approx(hand, abs=1e-14)


def test_disturbance_bound_enforced():
    sys = scalar_system(gamma=0.1)
    with pytest.raises(DisturbanceBoundViolation):
        simulate(sys, gains_from([[[0.0]]]), [np.zeros(1)], CustomDisturbance([[[0.5]]]), steps=1)


def test_determinism(tuned):
    sys, hp, gains = tuned
    x0 = default_initial_state(gains)
    a = simulate(sys, gains, x0, UniformBallDisturbance(4), 15, hp=hp)
    b = simulate(sys, gains, x0, UniformBallDisturbance(4), 15, hp=hp)
    for i in range(sys.N):
        np.testing.assert_array_equal(a.x[i], b.x[i])
        np.testing.assert_array_equal(a.d[i], b.d[i])
    assert verify_rpi_montecarlo(sys, gains, hp, 300, seed=2) == verify_rpi_montecarlo(sys, gains, hp, 300, seed=2)


def test_settling_step():
    s = np.array([[1.0], [0.5], [0.001], [0.02], [0.001], [0.0]])
    assert settling_step(s, 0.01) == 4
    assert settling_step(s[:4], 0.01) is None


def test_montecarlo_detects_corruption(tuned):
    sys, hp, gains = tuned
    assert verify_rpi_montecarlo(sys, gains, hp, 500, seed=1).violations == 0
    assert verify_rpi_montecarlo(sys, gains.scaled(10.0), hp, 500, seed=1).violations > 0


def test_iss_and_terminal_decrease(tuned):
    sys, hp, gains = tuned
    traj = simulate(sys, gains, default_initial_state(gains), UniformBallDisturbance(0), 30, hp=hp)
    assert verify_iss_decrease(traj, gains, hp).passed
    assert verify_terminal_decrease(traj, None, gains, hp, sys).passed
    assert not input_violations(traj, sys, hp)


def test_iss_detects_corruption(tuned):
    sys, hp, gains = tuned
    bad = gains.scaled(3.0)
    x0 = default_initial_state(gains, scale=0.05)
    traj = simulate(sys, bad, x0, steps=3, hp=hp)
    rep = verify_iss_decrease(traj, bad, hp)
    assert rep.failures and all(isinstance(k, int) for _, k in rep.failures)


def test_terminal_decrease_scalar_hand_values():
    # x+ = 0.5 x, u = -0.5 x, V = x^2, Q = 0.1: 0.25x^2 - x^2 + 0.1x^2 + 0.25x^2 = -0.4x^2
    sys = scalar_system(a=1.0, b=1.0)
    g = gains_from([[[-0.5]]], X=[np.eye(1)], sigma=[1.0])
    traj = simulate(sys, g, [np.array([0.8])], steps=3, hp=_scalar_hp(Q=0.1))
    rep = verify_terminal_decrease(traj, None, g, _scalar_hp(Q=0.1), sys)
    xs = 0.8 * 0.5 ** np.arange(3)
    np.testing.assert_allclose(rep.residuals[0], -0.4 * xs ** 2, atol=1e-14)
    assert rep.passed
