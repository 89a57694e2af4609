"""Built-in benchmark plants: a three-subsystem mathematical example and a coupled double pendulum."""

from __future__ import annotations

import numpy as np

from .fuzzy_model import (
    Cos2Membership,
    LargeScaleSystem,
    RestrictedMembership,
    SubsystemRules,
    TriangularMembership,
)
from .lmi_synthesis import GainSet, SynthesisHyperparams

# --- three-subsystem example ------------------------------------------------

EX1_A = (
    ([[0.55, 0.05], [0.0, 0.42]], [[0.4, 0.0], [0.0, 0.08]]),
    ([[0.325, 0.0], [0.4, 0.0]], [[0.6, 0.2], [0.1, 0.0]]),
    ([[0.2, 0.4], [0.2, 0.0]], [[0.3, 0.0], [0.0, 0.4]]),
)
EX1_B = (
    ([[1.0], [0.0]], [[0.0], [1.0]]),
    ([[1.0], [-1.0]], [[-1.0], [1.0]]),
    ([[1.0], [1.0]], [[-2.0], [1.0]]),
)
EX1_W = (
    ([[0.1], [0.0]], [[0.0], [0.1]]),
    ([[-0.1], [0.0]], [[0.0], [-0.2]]),
    ([[-0.3], [0.0]], [[0.0], [-0.4]]),
)
EX1_F = {
    (0, 1): [[0.08, 0.05], [0.05, 0.05]],
    (0, 2): [[0.09, 0.06], [0.06, 0.09]],
    (1, 0): [[0.1, 0.1], [0.0, 0.0]],
    (1, 2): [[0.0, 0.0], [0.1, 0.1]],
    (2, 0): [[0.03, 0.0], [0.0, 0.02]],
    (2, 1): [[0.1, 0.0], [0.1, 0.0]],
}
EX1_LAMBDA = (0.5, 0.488, 0.487)
EX1_X_SCALE = (0.015, 0.018, 0.027)
EX1_VARPI = 0.5
EX1_Q = np.diag([5.0, 5.0])
EX1_H = 5.0
EX1_DELAY = 1


def example1(gamma: float = 1.0, u_max: float | None = None) -> LargeScaleSystem:
    """Three second-order subsystems, two rules each, ``mu1 = cos(x_i2)^2``.

    Disturbance radius and input bounds are not part of the published data;
    ``u_max`` defaults to ``sqrt(H)`` so the per-channel bound matches the
    input-energy bound.
    """
    u_max = np.sqrt(EX1_H) if u_max is None else u_max
    subs = []
    for i in range(3):
        A = [np.array(a) for a in EX1_A[i]]
        subs.append(SubsystemRules(
            index=i + 1, A=A, B=EX1_B[i], A_d=[0.5 * a for a in A], w=EX1_W[i],
            f={j: EX1_F[(i, j)] for j in range(3) if j != i},
            membership=Cos2Membership(state_index=1)))
    return LargeScaleSystem(subs, h=EX1_DELAY, gamma=[gamma] * 3, u_max=[[u_max]] * 3)


def example1_hyperparams(tau: float = 1.0, rho: float = 0.5, alpha: float = 2.0) -> SynthesisHyperparams:
    """Published values: contraction rates, shape matrices, ``varpi``, ``Q`` and ``H``."""
    return SynthesisHyperparams.uniform(
        3, lam=EX1_LAMBDA, X=[s * np.eye(2) for s in EX1_X_SCALE], varpi=EX1_VARPI,
        tau=tau, H=EX1_H, Q=EX1_Q, R=np.eye(1), rho=rho, alpha=alpha)


def restrict_premise(sys: LargeScaleSystem, mu1_range: tuple) -> LargeScaleSystem:
    """Re-express two-rule subsystems on the sub-interval ``mu1 in [lo, hi]``.

    The new rules are the plant blends at the interval end points, so the
    restricted model equals the original one wherever the premise stays in
    range; outside it the membership raises.
    """
    lo, hi = mu1_range
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("need 0 <= lo < hi <= 1")
    V = np.array([[hi, 1 - hi], [lo, 1 - lo]])
    subs = []
    for sub in sys.subsystems:
        if sub.rule_count != 2:
            raise ValueError("premise restriction is implemented for two-rule subsystems")

        def mix(mats):
            return [V[r, 0] * mats[0] + V[r, 1] * mats[1] for r in range(2)]

        subs.append(SubsystemRules(
            index=sub.index, A=mix(sub.A), B=mix(sub.B), A_d=mix(sub.A_d), w=mix(sub.w),
            f=dict(sub.f), membership=RestrictedMembership(sub.membership, V),
            C_out=sub.C_out))
    return LargeScaleSystem(subs, h=sys.h, gamma=sys.gamma, u_max=sys.u_max)


def premise_half_width(mu1_low: float) -> float:
    """Largest ``|x_i2|`` keeping ``cos(x_i2)^2 >= mu1_low``."""
    return float(np.arccos(np.sqrt(mu1_low)))


# Certified configuration for the three-subsystem example (see README): a
# premise interval near the first rule, weak contraction and shape matrices
# chosen by alternating gain/shape tuning at trace 200.
EX1_TUNED = {
    "mu1_range": (0.6, 1.0),
    "lam": (0.02, 0.02, 0.1),
    "X": (
        [[100.16, -10.51], [-10.51, 99.84]],
        [[158.0, 3.11], [3.11, 42.0]],
        [[75.92, -39.07], [-39.07, 124.08]],
    ),
    "varpi": 1e3,
    "tau": 100.0,
    "rho": 0.8,
    "alpha": 2.0,
}


def example1_tuned(gamma: float = 1.0):
    """Restricted plant and tuned hyperparameters used by the behavioural checks."""
    t = EX1_TUNED
    sys = restrict_premise(example1(gamma), t["mu1_range"])
    hp = SynthesisHyperparams.uniform(
        3, lam=t["lam"], X=[np.array(x) for x in t["X"]], varpi=t["varpi"],
        tau=t["tau"], H=EX1_H, Q=EX1_Q, R=np.eye(1), rho=t["rho"], alpha=t["alpha"])
    return sys, hp


# --- double pendulum --------------------------------------------------------

EX2_A_SIDE = ([[1.0, 0.005], [0.0262, 1.0]], [[1.0, 0.005], [0.0272, 1.0]])
EX2_A_CENTRE = ([[1.0, 0.005], [0.0441, 1.0]], [[1.0, 0.005], [0.0451, 1.0]])
EX2_B = ([[1.0], [0.0]], [[1.0], [1.0]])
EX2_W = [[0.1], [0.0]]
EX2_G = [[0.08, 0.05], [0.05, 0.05]]
EX2_LAMBDA = (0.5, 0.448)
EX2_X_SCALE = (0.015, 0.018)
EX2_C_OUT = [[1.0, 0.0]]
EX2_GAINS = (
    ([-4.54, -6.06], [-6.009, -8.79], [-15.15, -19.585]),
    ([-5.14, -3.01], [-1.049, -4.14], [-28.255, -12.252]),
)


def example2(gamma: float = 1.0, u_max: float = 100.0, half_width: float = np.pi / 2,
             delay: int = 1) -> LargeScaleSystem:
    """Two coupled pendulum subsystems, three rules on the first state.

    Rules 1 and 3 share the side matrix, rule 2 is the centre matrix.
    """
    subs = []
    for i in range(2):
        side, centre = np.array(EX2_A_SIDE[i]), np.array(EX2_A_CENTRE[i])
        A = [side, centre, side]
        subs.append(SubsystemRules(
            index=i + 1, A=A, B=[EX2_B[i]] * 3, A_d=[0.5 * a for a in A], w=[EX2_W] * 3,
            f={1 - i: EX2_G}, membership=TriangularMembership(0, half_width),
            C_out=EX2_C_OUT))
    return LargeScaleSystem(subs, h=delay, gamma=[gamma] * 2, u_max=[[u_max]] * 2)


def example2_gains() -> GainSet:
    k = tuple(tuple(np.array([g]) for g in ks) for ks in EX2_GAINS)
    return GainSet(k=k, sigma=(1.0, 1.0), Z=(np.zeros((2, 2)),) * 2, X_bar=(np.zeros(2),) * 2,
                   X=tuple(s * np.eye(2) for s in EX2_X_SCALE))


def example2_hyperparams() -> SynthesisHyperparams:
    return SynthesisHyperparams.uniform(
        2, lam=EX2_LAMBDA, X=[s * np.eye(2) for s in EX2_X_SCALE], varpi=EX1_VARPI,
        tau=1.0, H=EX1_H, Q=EX1_Q, R=np.eye(1), rho=0.5)


BUILTIN = {"example1": example1, "example2": example2}
