"""Hamiltonian, multiplier/interaction updates, interaction error and the outer loop."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import gains_from
from fuzzy_lsmpc import datasets
from fuzzy_lsmpc.coordination import (
    CoordinationConfig,
    CoordinationState,
    hamiltonian,
    interaction_error,
    run_algorithm,
    update_interactions,
    update_multipliers,
)
from fuzzy_lsmpc.errors import HorizonMismatch, NoConvergence
from fuzzy_lsmpc.fuzzy_model import ConstantMembership, LargeScaleSystem, SubsystemRules
from fuzzy_lsmpc.lmi_synthesis import SynthesisHyperparams
from fuzzy_lsmpc.simulation import simulate


def _sub(A, idx=1, f=None, B=None):
    n = np.asarray(A).shape[0]
    return SubsystemRules(idx, A=[A], B=[np.zeros((n, 1)) if B is None else B], A_d=[np.zeros((n, n))],
                          w=[np.zeros((n, 1))], f=f or {}, membership=ConstantMembership([1.0]))


def _hp(N, n=2, **kw):
    args = dict(lam=0.3, X=[np.eye(n)] * N, varpi=1.0, tau=1.0, H=25.0, Q=np.eye(n), rho=0.5)
    args.update(kw)
    return SynthesisHyperparams.uniform(N, **args)


def test_hamiltonian_zero():
    sys = LargeScaleSystem([_sub(np.eye(2))], h=1, gamma=[1.0], u_max=[[1.0]])
    g = gains_from([[[0.0, 0.0]]], X=[np.eye(2)])
    traj = simulate(sys, g, [np.zeros(2)], steps=1)
    coord = CoordinationState.zeros(sys, 1)
    assert hamiltonian(sys, g, coord, traj, _hp(1)) == 0.0


def test_hamiltonian_constant_state():
    sys = LargeScaleSystem([_sub(np.eye(2))], h=1, gamma=[1.0], u_max=[[1.0]])
    g = gains_from([[[0.0, 0.0]]], X=[0.015 * np.eye(2)], sigma=[1.0])
    x = np.array([1.0, 0.0])
    traj = simulate(sys, g, [x], steps=1)
    coord = CoordinationState.zeros(sys, 1)
    hp = _hp(1, Q=np.diag([5.0, 5.0]), X=[0.015 * np.eye(2)])
    assert hamiltonian(sys, g, coord, traj, hp) == pytest.approx(5.0 + x @ (0.015 * np.eye(2)) @ x, abs=1e-14)


def test_hamiltonian_penalties_vanish_on_consistent_data(ex1):
    g = gains_from([[[-0.1, 0.0], [0.0, -0.1]]] * 3, X=[np.eye(2)] * 3)
    x0 = [np.array([0.1, -0.1]), np.array([0.2, 0.0]), np.array([0.0, 0.1])]
    traj = simulate(ex1, g, x0, steps=3)
    hp = datasets.example1_hyperparams()
    base = CoordinationState.zeros(ex1, 3)
    coord = CoordinationState.zeros(ex1, 3)
    coord.z = update_interactions(ex1, traj, 3)
    rng = np.random.default_rng(0)
    coord.delta = [rng.normal(size=(3, 2)) for _ in range(3)]
    coord.p_bar = [rng.normal(size=(4, 2)) for _ in range(3)]
    # with C = I and z = sum f x, the model residual equals the real dynamics
    assert hamiltonian(ex1, g, coord, traj, hp) == pytest.approx(hamiltonian(ex1, g, base, traj, hp), abs=1e-12)


def test_update_multipliers():
    sys = LargeScaleSystem([_sub(np.eye(2))], h=1, gamma=[1.0], u_max=[[1.0]])
    c = CoordinationState.zeros(sys, 1, C=[np.zeros((2, 2))])
    c.p_bar = [np.array([[0.0, 0.0], [1.0, 2.0]])]
    np.testing.assert_array_equal(update_multipliers(c)[0], 0.0)
    c = CoordinationState.zeros(sys, 1)
    c.p_bar = [np.array([[0.0, 0.0], [1.0, 2.0]])]
    np.testing.assert_allclose(update_multipliers(c)[0][0], [-1.0, -2.0])
    c = CoordinationState.zeros(sys, 1, C=[[[0.0, 1.0], [1.0, 0.0]]])
    c.p_bar = [np.array([[0.0, 0.0], [3.0, 4.0]])]
    np.testing.assert_allclose(update_multipliers(c)[0][0], [-4.0, -3.0])


def test_update_interactions_identity():
    sys = LargeScaleSystem([_sub(np.eye(2), 1, f={1: np.eye(2)}), _sub(np.eye(2), 2)], h=1,
                           gamma=[1.0, 1.0], u_max=[[1.0], [1.0]])
    g = gains_from([[[0.0, 0.0]]] * 2)
    traj = simulate(sys, g, [np.zeros(2), np.ones(2)], steps=1)
    np.testing.assert_allclose(update_interactions(sys, traj, 1)[0][0], [1.0, 1.0])
    zero = simulate(sys, g, [np.zeros(2), np.zeros(2)], steps=1)
    np.testing.assert_array_equal(update_interactions(sys, zero, 1)[0], 0.0)


def test_update_interactions_example1(ex1):
    g = gains_from([[[0.0, 0.0], [0.0, 0.0]]] * 3)
    traj = simulate(ex1, g, [np.zeros(2), np.array([1.0, 0.0]), np.array([1.0, 0.0])], steps=1)
    np.testing.assert_allclose(update_interactions(ex1, traj, 1)[0][0], [0.17, 0.11], atol=1e-15)


def test_interaction_error_examples():
    sys1 = LargeScaleSystem([SubsystemRules(1, A=[[[0.0]]], B=[[[0.0]]], A_d=[[[0.0]]], w=[[[0.0]]], f={},
                                            membership=ConstantMembership([1.0]))],
                            h=1, gamma=[1.0], u_max=[[1.0]])
    g1 = gains_from([[[0.0]]])
    traj = simulate(sys1, g1, [np.zeros(1)], steps=2)
    c = CoordinationState.zeros(sys1, 2)
    assert interaction_error(sys1, c, traj) == 0.0
    c.z = [np.ones((2, 1))]
    assert interaction_error(sys1, c, traj) == pytest.approx(1.0)

    sys2 = LargeScaleSystem([_sub(np.zeros((2, 2)), 1), _sub(np.zeros((2, 2)), 2)], h=1,
                            gamma=[1.0, 1.0], u_max=[[1.0], [1.0]])
    g2 = gains_from([[[0.0, 0.0]]] * 2)
    traj2 = simulate(sys2, g2, [np.zeros(2)] * 2, steps=2)
    c2 = CoordinationState.zeros(sys2, 2)
    c2.z = [np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 2.0]])]
    assert interaction_error(sys2, c2, traj2) == pytest.approx(5.0)


def test_interaction_error_from_update_is_zero(ex1):
    g = gains_from([[[-0.1, 0.0], [0.0, -0.1]]] * 3)
    traj = simulate(ex1, g, [np.array([0.1, 0.2])] * 3, steps=4)
    c = CoordinationState.zeros(ex1, 4)
    c.z = update_interactions(ex1, traj, 4)
    assert interaction_error(ex1, c, traj) == 0.0


def test_horizon_mismatch():
    sys = LargeScaleSystem([_sub(np.eye(2))], h=1, gamma=[1.0], u_max=[[1.0]])
    with pytest.raises(HorizonMismatch):
        CoordinationState.zeros(sys, 0)
    traj = simulate(sys, gains_from([[[0.0, 0.0]]]), [np.zeros(2)], steps=2)
    with pytest.raises(HorizonMismatch):
        interaction_error(sys, CoordinationState.zeros(sys, 3), traj)


def _decoupled():
    B = np.array([[1.0], [0.0]])
    subs = [_sub(np.diag([0.5, 0.2]), 1, B=B), _sub(np.diag([0.4, 0.1]), 2, B=B)]
    return LargeScaleSystem(subs, h=1, gamma=[0.1, 0.1], u_max=[[10.0], [10.0]])


def test_decoupled_converges_first_pass():
    sys = _decoupled()
    gains, report, traj = run_algorithm(sys, _hp(2, Q=0.01 * np.eye(2), H=1.0), [np.array([0.1, 0.1])] * 2,
                                        CoordinationConfig(K=5))
    assert report.converged
    assert report.iterations_used == 1
    assert report.error_per_iteration == [0.0]
    assert gains.certified()


def test_zero_iterations_raise():
    sys = _decoupled()
    with pytest.raises(NoConvergence):
        run_algorithm(sys, _hp(2), [np.zeros(2)] * 2, CoordinationConfig(max_iter=0))
