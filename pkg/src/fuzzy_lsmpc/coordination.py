"""Two-level interaction-prediction coordination around the per-subsystem syntheses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, HorizonMismatch, NoConvergence
from .fuzzy_model import LargeScaleSystem, blend, interaction_term
from .lmi_synthesis import FAMILIES, CoordinationValues, SynthesisHyperparams, synthesize
from .simulation import Trajectory, level_value, simulate, stage_cost

logger = logging.getLogger(__name__)


@dataclass
class CoordinationState:
    """Multipliers ``delta_i(k)``, estimates ``z_i(k)`` (``k < K``) and co-states ``p_bar_i(k)`` (``k <= K``)."""

    delta: list
    z: list
    p_bar: list
    C: list
    K: int
    iteration: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def zeros(cls, sys: LargeScaleSystem, K: int, C: Sequence | None = None) -> "CoordinationState":
        if K < 1:
            raise HorizonMismatch("horizon K must be at least 1")
        ns = [s.n for s in sys.subsystems]
        C = [np.eye(n) for n in ns] if C is None else [np.atleast_2d(np.asarray(c, float)) for c in C]
        return cls(delta=[np.zeros((K, n)) for n in ns], z=[np.zeros((K, n)) for n in ns],
                   p_bar=[np.zeros((K + 1, n)) for n in ns], C=C, K=K)

    @property
    def N(self) -> int:
        return len(self.C)

    def validate(self) -> None:
        if not len(self.delta) == len(self.z) == len(self.p_bar) == len(self.C):
            raise DimensionMismatch("coordination arrays need one entry per subsystem")
        for i in range(len(self.C)):
            n = self.C[i].shape[0]
            if self.C[i].shape != (n, n):
                raise DimensionMismatch(f"C[{i}] must be square")
            if self.delta[i].shape != (self.K, n) or self.z[i].shape != (self.K, n):
                raise HorizonMismatch(f"delta/z of subsystem {i} do not span K={self.K} steps")
            if self.p_bar[i].shape != (self.K + 1, n):
                raise HorizonMismatch(f"p_bar of subsystem {i} must span K+1={self.K + 1} samples")

    def delta_at(self, i: int, k: int) -> np.ndarray:
        """``delta_i(k)``; held at its last value beyond the horizon."""
        return self.delta[i][min(k, self.K - 1)]

    def z_at(self, i: int, k: int) -> np.ndarray:
        return self.z[i][min(k, self.K - 1)]

    def values_for(self, i: int) -> CoordinationValues:
        """Frozen values entering subsystem ``i``'s terminal block (first horizon sample)."""
        return CoordinationValues(delta=tuple(d[0].copy() for d in self.delta), z=self.z[i][0].copy(),
                                  iteration=self.iteration)


@dataclass
class CoordinationReport:
    error_per_iteration: list = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    sigma_per_iteration: list = field(default_factory=list)


@dataclass(frozen=True)
class CoordinationConfig:
    K: int = 10
    tol: float = 1e-6
    max_iter: int = 20
    disturbance: object = None
    delay_schedule: object = None
    history: object = None
    families: tuple = FAMILIES
    workers: int = 1


def _check_horizon(coord: CoordinationState, traj: Trajectory) -> None:
    if traj.N != coord.N:
        raise DimensionMismatch("trajectory and coordination state disagree on N")
    if traj.steps < coord.K:
        raise HorizonMismatch(f"trajectory has {traj.steps} steps, horizon needs {coord.K}")


def hamiltonian(sys: LargeScaleSystem, gains, coord: CoordinationState, traj: Trajectory,
                hp: SynthesisHyperparams) -> float:
    """Horizon Hamiltonian with terminal value ``V_i(x_i(K))``.

    ``sum_i { V_i(x_i(K)) + sum_k [ stage_i + delta_i'(z_i - sum_j f_ij x_j)
    + p_bar_i(k+1)'(-x_i(k+1) + g_i) ] }`` with
    ``g_i = A x + A_d x_d + B u + w d + C_i z_i`` at the recorded memberships.
    """
    _check_horizon(coord, traj)
    K = coord.K
    total = 0.0
    for i, sub in enumerate(sys.subsystems):
        if gains is not None and getattr(gains, "X", None) is not None:
            total += level_value(traj.state(i, K), gains.X[i], gains.sigma[i])
        for k in range(K):
            x_all = [traj.state(j, k) for j in range(sys.N)]
            x, u, d = x_all[i], traj.u[i][k], traj.d[i][k]
            xd = traj.state(i, k + int(traj.delay[k]))
            bl = blend(sub, traj.mu[i][k])
            z = coord.z[i][k]
            g = bl.A @ x + bl.A_d @ xd + bl.B @ u + bl.w @ d + coord.C[i] @ z
            total += stage_cost(x, u, d, hp.Q[i], hp.R[i], hp.tau[i])
            total += float(coord.delta[i][k] @ (z - interaction_term(sys, i, x_all)))
            total += float(coord.p_bar[i][k + 1] @ (g - traj.state(i, k + 1)))
    return float(total)


def update_multipliers(coord: CoordinationState) -> list:
    """``delta_i(k) = -C_i' p_bar_i(k+1)`` for every ``i`` and ``k < K``."""
    return [-(coord.p_bar[i][1:] @ coord.C[i]) for i in range(coord.N)]


def update_interactions(sys: LargeScaleSystem, traj: Trajectory, K: int) -> list:
    """``z_i(k) = sum_j f_ij x_j(k)`` for ``k < K``."""
    if traj.steps < K:
        raise HorizonMismatch(f"trajectory has {traj.steps} steps, horizon needs {K}")
    out = []
    for i in range(sys.N):
        out.append(np.array([interaction_term(sys, i, [traj.state(j, k) for j in range(sys.N)])
                             for k in range(K)]))
    return out


def interaction_error(sys: LargeScaleSystem, coord: CoordinationState, traj: Trajectory) -> float:
    """``sum_i sum_{k=1}^{K-1} |z_i(k) - sum_j f_ij x_j(k)|^2`` (the first sample is excluded)."""
    _check_horizon(coord, traj)
    actual = update_interactions(sys, traj, coord.K)
    e = 0.0
    for i in range(sys.N):
        r = coord.z[i][1:] - actual[i][1:]
        e += float(np.sum(r * r))
    return e


def _level_points(x0, history, N):
    pts = [[np.asarray(x0[i], float)] for i in range(N)]
    if history is not None:
        for snap in history:
            for i in range(N):
                p = np.asarray(snap[i], float)
                if not any(np.array_equal(p, q) for q in pts[i]):
                    pts[i].append(p)
    return pts


def run_algorithm(sys: LargeScaleSystem, hp: SynthesisHyperparams, x0,
                  config: CoordinationConfig | None = None, C: Sequence | None = None):
    """Outer coordination loop.

    Each pass synthesizes every subsystem with the frozen multipliers and
    estimates, recovers ``p_bar_i = X_bar_i / sigma_i`` (constant over the
    horizon), simulates ``K`` steps and evaluates the interaction error.  The
    loop stops once the error is at most ``config.tol``; otherwise the
    multipliers and estimates are refreshed from the new co-states and
    trajectory.  Raises :class:`NoConvergence` (carrying the best iterate)
    when ``max_iter`` passes do not reach the tolerance.
    """
    config = config or CoordinationConfig()
    report = CoordinationReport()
    if config.max_iter < 1:
        raise NoConvergence("max_iter < 1: no coordination pass was run", gains=None, report=report,
                            trajectory=None)
    coord = CoordinationState.zeros(sys, config.K, C)
    level_pts = _level_points(x0, config.history, sys.N)
    steps = config.K
    best = None
    for it in range(config.max_iter):
        coord.iteration = it
        gains = synthesize(sys, hp, coord=[coord.values_for(i) for i in range(sys.N)],
                           x_history=level_pts, families=config.families, iteration=it,
                           workers=config.workers)
        for i in range(sys.N):
            coord.p_bar[i] = np.tile(np.asarray(gains.X_bar[i], float) / gains.sigma[i], (config.K + 1, 1))
        traj = simulate(sys, gains, x0, config.disturbance, steps, config.delay_schedule, hp=hp,
                        history=config.history, metadata={"coordination_iteration": it})
        e = interaction_error(sys, coord, traj)
        report.error_per_iteration.append(e)
        report.sigma_per_iteration.append(list(gains.sigma))
        report.iterations_used = it + 1
        logger.info("coordination pass %d: e = %.3e, sigma = %s", it, e, np.round(gains.sigma, 6))
        if best is None or e < best[0]:
            best = (e, gains, traj)
        if e <= config.tol:
            report.converged = True
            _soft_monotone_check(report)
            return gains, report, traj
        coord.delta = update_multipliers(coord)
        coord.z = update_interactions(sys, traj, config.K)
    _soft_monotone_check(report)
    raise NoConvergence(f"interaction error {best[0]:.3e} above {config.tol:.1e} after {config.max_iter} passes",
                        gains=best[1], report=report, trajectory=best[2])


def _soft_monotone_check(report: CoordinationReport) -> None:
    err = report.error_per_iteration
    if any(b > a * (1 + 1e-9) + 1e-15 for a, b in zip(err[1:], err[2:])):
        logger.warning("interaction error not monotone after the first pass: %s", err)
