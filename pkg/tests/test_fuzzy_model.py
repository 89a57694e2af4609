"""Memberships, blending, control law, delay buffer and one-step dynamics."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gains_from, scalar_system
from fuzzy_lsmpc import datasets
from fuzzy_lsmpc.errors import AllZeroWeights, BufferUnderflow, DimensionMismatch, MissingGain
from fuzzy_lsmpc.fuzzy_model import (
    ConstantMembership,
    Cos2Membership,
    DelayBuffer,
    LargeScaleSystem,
    PeriodicDelay,
    RandomDelay,
    SubsystemRules,
    blend,
    control_output,
    evaluate_membership,
    evaluate_weights,
    step_closed_loop,
)

EX1_K11 = [-4.54, -6.06]


# --- memberships ------------------------------------------------------------


def test_cos2_at_symmetry_point(ex1):
    np.testing.assert_allclose(evaluate_membership(ex1.subsystems[0], [0.3, 0.0]), [1.0, 0.0])


def test_cos2_at_quarter_pi(ex1):
    np.testing.assert_allclose(evaluate_membership(ex1.subsystems[0], [0.0, np.pi / 4]), [0.5, 0.5], atol=1e-15)


def test_raw_weights_are_normalized():
    np.testing.assert_allclose(evaluate_weights(ConstantMembership([2.0, 2.0]), [0.0]), [0.5, 0.5])


def test_all_zero_weights_rejected():
    with pytest.raises(AllZeroWeights):
        evaluate_weights(ConstantMembership([0.0, 0.0]), [0.0])


def test_short_premise_rejected():
    with pytest.raises(DimensionMismatch):
        evaluate_weights(Cos2Membership(1), [0.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_membership_convexity(z):
    sys = datasets.example1()
    mu = evaluate_membership(sys.subsystems[0], z)
    assert np.all(mu >= 0)
    assert abs(mu.sum() - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-1.5, 1.5))
def test_triangular_membership_convexity(z):
    sys = datasets.example2()
    mu = evaluate_membership(sys.subsystems[0], [z, 0.0])
    assert mu.shape == (3,)
    assert np.all(mu >= 0)
    assert abs(mu.sum() - 1.0) < 1e-12


# --- blending ---------------------------------------------------------------


def test_blend_vertex(ex1):
    bl = blend(ex1.subsystems[0], [1.0, 0.0])
    np.testing.assert_array_equal(bl.A, ex1.subsystems[0].A[0])


def test_blend_midpoint(ex1):
    bl = blend(ex1.subsystems[0], [0.5, 0.5])
    np.testing.assert_allclose(bl.A, [[0.475, 0.025], [0.0, 0.25]], atol=1e-15)


def test_blend_midpoint_matches_elementwise_oracle(ex1):
    sub = ex1.subsystems[0]
    A1, A2 = sub.A
    oracle = [[0.5 * A1[r][c] + 0.5 * A2[r][c] for c in range(2)] for r in range(2)]
    np.testing.assert_allclose(blend(sub, [0.5, 0.5]).A, oracle, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1))
def test_blend_idempotence(t):
    a = [[0.3, 0.1], [0.0, 0.2]]
    sub = SubsystemRules(1, A=[a, a], B=[[[1.0], [0.0]]] * 2, A_d=[np.zeros((2, 2))] * 2,
                         w=[[[0.0], [0.0]]] * 2, f={}, membership=Cos2Membership(1))
    np.testing.assert_allclose(blend(sub, [t, 1 - t]).A, a, atol=1e-14)


def test_blend_wrong_weight_count(ex1):
    with pytest.raises(DimensionMismatch):
        blend(ex1.subsystems[0], [1.0, 0.0, 0.0])


# --- control law ------------------------------------------------------------


def test_control_zero_state():
    g = gains_from([[EX1_K11, [1.0, 2.0]]])
    np.testing.assert_array_equal(control_output(g, 0, [0.3, 0.7], [0.0, 0.0]), [0.0])


def test_control_published_gain():
    g = gains_from([[EX1_K11, [0.0, 0.0]]])
    np.testing.assert_allclose(control_output(g, 0, [1.0, 0.0], [1.0, 0.0]), [-4.54])


def test_control_equal_gains():
    g = gains_from([[[1.5, -2.0], [1.5, -2.0]]])
    x = np.array([0.3, -0.7])
    np.testing.assert_allclose(control_output(g, 0, [0.5, 0.5], x), [1.5 * 0.3 + 2.0 * 0.7])


def test_missing_gain():
    g = gains_from([[EX1_K11]])
    with pytest.raises(MissingGain):
        control_output(g, 0, [0.5, 0.5], [1.0, 0.0])


# --- delay buffer and delay schedules ----------------------------------------


def test_buffer_lookup_and_underflow():
    buf = DelayBuffer.from_initial([np.array([0.0])], h=2,
                                   history=[[np.array([-2.0])], [np.array([-1.0])], [np.array([0.0])]])
    assert buf.lookup(-2)[0][0] == -2.0
    assert buf.lookup(0)[0][0] == 0.0
    with pytest.raises(BufferUnderflow):
        buf.lookup(-3)
    with pytest.raises(BufferUnderflow):
        DelayBuffer.from_initial([np.zeros(1)], h=2, history=[[np.zeros(1)]])


def test_delay_schedules_in_range():
    r = RandomDelay(3, seed=5)
    draws = [r(k) for k in range(200)]
    assert set(draws) == {-1, -2, -3}
    assert draws == [RandomDelay(3, seed=5)(k) for k in range(200)]
    assert [PeriodicDelay([1, 2])(k) for k in range(4)] == [-1, -2, -1, -2]


# --- dynamics -----------------------------------------------------------------


def test_step_zero_history(ex1):
    g = gains_from([[EX1_K11, EX1_K11]] * 3)
    buf = DelayBuffer.from_initial(ex1.zero_state(), ex1.h)
    nxt = step_closed_loop(ex1, g, buf, 0, [np.zeros(1)] * 3)
    for x in nxt:
        np.testing.assert_array_equal(x, 0.0)


def test_step_scalar_decoupled():
    sys = scalar_system(a=0.5, b=0.0)
    g = gains_from([[[0.0]]])
    buf = DelayBuffer.from_initial([np.array([1.0])], 1)
    assert step_closed_loop(sys, g, buf, 0, [np.zeros(1)])[0][0] == pytest.approx(0.5, abs=1e-15)


def test_step_example1_subsystem1_oracle(ex1):
    g = gains_from([[[0.0, 0.0], [0.0, 0.0]]] * 3)
    x = [np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0])]
    buf = DelayBuffer.from_initial(x, 1, history=[x, x])
    nxt = step_closed_loop(ex1, g, buf, 0, [np.zeros(1)] * 3, mu_override=[[1.0, 0.0]] * 3)
    A11 = [[0.55, 0.05], [0.0, 0.42]]
    f12 = [[0.08, 0.05], [0.05, 0.05]]
    f13 = [[0.09, 0.06], [0.06, 0.09]]

    def mv(M, v):
        return [sum(M[r][c] * v[c] for c in range(2)) for r in range(2)]

    expect = [a + 0.5 * a + b + c for a, b, c in zip(mv(A11, [1, 0]), mv(f12, [1, 1]), mv(f13, [1, 1]))]
    np.testing.assert_allclose(nxt[0], expect, atol=1e-14)


def test_step_is_linear_in_state_and_disturbance(ex1):
    g = gains_from([[[0.2, -0.1], [0.1, 0.3]]] * 3)
    rng = np.random.default_rng(0)
    xa = [rng.normal(size=2) for _ in range(3)]
    xb = [rng.normal(size=2) for _ in range(3)]
    da = [rng.normal(size=1) * 0.1 for _ in range(3)]
    db = [rng.normal(size=1) * 0.1 for _ in range(3)]
    mu = [[0.3, 0.7]] * 3

    def run(x, d):
        buf = DelayBuffer.from_initial(x, 1)
        return step_closed_loop(ex1, g, buf, 0, d, mu_override=mu)

    s = [a + 2 * b for a, b in zip(xa, xb)]
    ds = [a + 2 * b for a, b in zip(da, db)]
    for lhs, ra, rb in zip(run(s, ds), run(xa, da), run(xb, db)):
        np.testing.assert_allclose(lhs, ra + 2 * rb, atol=1e-12)


def test_decoupling_equivalence():
    """With all interconnections zero, each subsystem evolves as if alone."""
    def sub(a, idx):
        return SubsystemRules(idx, A=[[[a]]], B=[[[1.0]]], A_d=[[[0.1]]], w=[[[0.2]]], f={},
                              membership=ConstantMembership([1.0]))

    joint = LargeScaleSystem([sub(0.5, 1), sub(-0.3, 2)], h=1, gamma=[1, 1], u_max=[[1e3], [1e3]])
    g = gains_from([[[-0.2]], [[0.1]]])
    x = [np.array([1.0]), np.array([-2.0])]
    d = [np.array([0.3]), np.array([-0.4])]
    both = step_closed_loop(joint, g, DelayBuffer.from_initial(x, 1), 0, d)
    for i, a in enumerate((0.5, -0.3)):
        alone = LargeScaleSystem([sub(a, 1)], h=1, gamma=[1], u_max=[[1e3]])
        gi = gains_from([[g.k[i][0]]])
        solo = step_closed_loop(alone, gi, DelayBuffer.from_initial([x[i]], 1), 0, [d[i]])
        np.testing.assert_array_equal(both[i], solo[0])


def test_self_interconnection_rejected():
    s = SubsystemRules(1, A=[[[0.5]]], B=[[[1.0]]], A_d=[[[0.0]]], w=[[[0.0]]], f={0: [[1.0]]},
                       membership=ConstantMembership([1.0]))
    with pytest.raises(DimensionMismatch):
        LargeScaleSystem([s], h=1, gamma=[1.0], u_max=[[1.0]])
