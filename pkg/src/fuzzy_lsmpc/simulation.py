"""Closed-loop simulation, cost accounting and certificate checks along trajectories."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, DisturbanceBoundViolation
from .fuzzy_model import (
    ConstantDelay,
    DelayBuffer,
    LargeScaleSystem,
    blend,
    control_output,
    evaluate_membership,
    interaction_term,
    step_details,
)

logger = logging.getLogger(__name__)

ADMISSIBILITY_TOL = 1e-12


# ---------------------------------------------------------------------------
# disturbances
# ---------------------------------------------------------------------------


class ZeroDisturbance:
    kind = "zero"

    def __call__(self, sys: LargeScaleSystem, k: int) -> list[np.ndarray]:
        return [np.zeros(s.c) for s in sys.subsystems]

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class UniformBallDisturbance:
    """``d_i(k)`` uniform in the ball of radius ``gamma_i``; one generator per ``(seed, k)``."""

    kind = "uniform_ball"

    def __init__(self, seed: int = 0, scale: float = 1.0):
        if not 0.0 <= scale <= 1.0:
            raise ValueError("scale must lie in [0, 1]")
        self.seed, self.scale = int(seed), float(scale)

    def __call__(self, sys: LargeScaleSystem, k: int) -> list[np.ndarray]:
        rng = np.random.default_rng([self.seed, int(k)])
        out = []
        for i, s in enumerate(sys.subsystems):
            out.append(self.scale * sys.gamma[i] * unit_ball_sample(rng, s.c))
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "scale": self.scale}


class SinusoidDisturbance:
    """``d_i(k) = a_i sin(2 pi k / period) 1 / sqrt(c_i)`` with ``a_i <= gamma_i``."""

    kind = "sinusoid"

    def __init__(self, amplitude: float | Sequence[float] | None = None, period: float = 20.0):
        self.amplitude, self.period = amplitude, float(period)

    def _amp(self, sys: LargeScaleSystem) -> np.ndarray:
        a = sys.gamma if self.amplitude is None else np.broadcast_to(
            np.asarray(self.amplitude, float), (sys.N,))
        if np.any(a > sys.gamma + ADMISSIBILITY_TOL):
            raise DisturbanceBoundViolation("sinusoid amplitude exceeds gamma")
        return a

    def __call__(self, sys: LargeScaleSystem, k: int) -> list[np.ndarray]:
        a = self._amp(sys)
        s = np.sin(2 * np.pi * k / self.period)
        return [a[i] * s * np.ones(sub.c) / np.sqrt(sub.c) for i, sub in enumerate(sys.subsystems)]

    def to_dict(self) -> dict:
        amp = None if self.amplitude is None else np.asarray(self.amplitude, float).tolist()
        return {"kind": self.kind, "amplitude": amp, "period": self.period}


class CustomDisturbance:
    """Replays a stored sequence ``seq[k][i]``; zero after its end."""

    kind = "custom"

    def __init__(self, sequence):
        self.sequence = [[np.atleast_1d(np.asarray(d, float)) for d in step] for step in sequence]

    def validate(self, sys: LargeScaleSystem) -> None:
        for k, step in enumerate(self.sequence):
            if len(step) != sys.N:
                raise DimensionMismatch(f"custom disturbance step {k} has {len(step)} entries")
            for i, d in enumerate(step):
                if d.shape != (sys.subsystems[i].c,):
                    raise DimensionMismatch(f"custom disturbance step {k}, subsystem {i}: shape {d.shape}")
                if d @ d > sys.gamma[i] ** 2 + ADMISSIBILITY_TOL:
                    raise DisturbanceBoundViolation(f"custom disturbance step {k}, subsystem {i} outside D_i")

    def __call__(self, sys: LargeScaleSystem, k: int) -> list[np.ndarray]:
        if k < len(self.sequence):
            return [d.copy() for d in self.sequence[k]]
        return [np.zeros(s.c) for s in sys.subsystems]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sequence": [[d.tolist() for d in s] for s in self.sequence]}


def disturbance_from_dict(options: dict | None):
    options = options or {"kind": "zero"}
    kind = options.get("kind", "zero")
    if kind == "zero":
        return ZeroDisturbance()
    if kind == "uniform_ball":
        return UniformBallDisturbance(options.get("seed", 0), options.get("scale", 1.0))
    if kind == "sinusoid":
        return SinusoidDisturbance(options.get("amplitude"), options.get("period", 20.0))
    if kind == "custom":
        return CustomDisturbance(options["sequence"])
    raise ValueError(f"unknown disturbance kind {kind!r}")


def unit_ball_sample(rng: np.random.Generator, dim: int, size: int | None = None) -> np.ndarray:
    """Uniform samples from the closed unit ball in ``R^dim``."""
    shape = (dim,) if size is None else (size, dim)
    g = rng.standard_normal(shape)
    g /= np.linalg.norm(g, axis=-1, keepdims=True)
    r = rng.random(() if size is None else (size, 1)) ** (1.0 / dim)
    return g * r


def ellipsoid_sample(rng: np.random.Generator, X: np.ndarray, radius: float, size: int) -> np.ndarray:
    """Uniform samples of ``{x : x' X x <= radius^2}``."""
    L = np.linalg.cholesky(np.asarray(X, float))
    u = unit_ball_sample(rng, X.shape[0], size)
    return radius * np.linalg.solve(L.T, u.T).T


# ---------------------------------------------------------------------------
# trajectories and costs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Recorded closed-loop run; per-subsystem arrays indexed ``[i][k]``.

    ``x[i]`` holds ``k = -h..steps`` (row ``h`` is ``x(0)``); ``u``, ``d``,
    ``mu``, ``stage_cost`` and ``delay`` hold ``k = 0..steps-1``; ``V``,
    ``Vbar`` and ``in_rpi`` hold ``k = 0..steps`` and are ``nan``/``False``
    when no level set is known.
    """

    x: tuple
    u: tuple
    d: tuple
    mu: tuple
    delay: np.ndarray
    stage_cost: tuple
    V: tuple
    Vbar: tuple
    in_rpi: tuple
    h: int
    weights: dict
    metadata: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.x)

    @property
    def steps(self) -> int:
        return len(self.delay)

    def state(self, i: int, k: int) -> np.ndarray:
        """``x_i(k)`` for ``k`` in ``[-h, steps]``."""
        return self.x[i][k + self.h]

    def states(self, i: int) -> np.ndarray:
        """``x_i(0..steps)``."""
        return self.x[i][self.h:]


def stage_cost(x, u, d, Q, R, tau: float) -> float:
    """``x'Qx + u'Ru - tau d'd`` (may be negative)."""
    x, u, d = (np.atleast_1d(np.asarray(v, float)) for v in (x, u, d))
    return float(x @ np.asarray(Q) @ x + u @ np.atleast_2d(R) @ u - tau * (d @ d))


def _weights(sys: LargeScaleSystem, hp) -> dict:
    if hp is None:
        return {"Q": [np.eye(s.n) for s in sys.subsystems], "R": [np.eye(s.m) for s in sys.subsystems],
                "tau": [0.0] * sys.N}
    return {"Q": [np.asarray(q, float) for q in hp.Q], "R": [np.asarray(r, float) for r in hp.R],
            "tau": [float(t) for t in hp.tau]}


def level_value(x, X, sigma: float) -> float:
    """``V_i = x' (X / sigma) x``."""
    x = np.asarray(x, float)
    return float(x @ np.asarray(X) @ x) / sigma


def rpi_membership(x, x_d, X, sigma: float) -> tuple[bool, float]:
    """``max(x'Px, x_d'Px_d)`` against ``sigma`` with ``P = X / sigma``; the set is closed."""
    v = max(level_value(x, X, sigma), level_value(x_d, X, sigma))
    return bool(v <= sigma), v


def simulate(sys: LargeScaleSystem, gains, x0, dist=None, steps: int = 30, delay_schedule=None,
             hp=None, history=None, on_violation: str = "raise", metadata: dict | None = None) -> Trajectory:
    """Run the delayed closed loop for ``steps`` steps from ``x0``.

    ``history`` (``h + 1`` snapshots, oldest first, ending at ``x(0)``)
    overrides the default constant backward extension of ``x0``.  ``hp``
    provides the stage weights; without it ``Q = I``, ``R = I`` and ``tau = 0``.
    """
    dist = dist if dist is not None else ZeroDisturbance()
    if isinstance(dist, CustomDisturbance):
        dist.validate(sys)
    delay_schedule = delay_schedule if delay_schedule is not None else ConstantDelay(min(1, sys.h) or 1)
    x0 = [np.asarray(x, float).ravel() for x in x0]
    if len(x0) != sys.N or any(x.shape != (s.n,) for x, s in zip(x0, sys.subsystems)):
        raise DimensionMismatch("x0 needs one state vector per subsystem")
    buf = DelayBuffer.from_initial(x0, sys.h, delay_schedule, history)
    pre = [list(s) for s in buf.history]
    w = _weights(sys, hp)
    xs = [[np.array(snap[i]) for snap in pre] for i in range(sys.N)]
    us = [[] for _ in range(sys.N)]
    ds = [[] for _ in range(sys.N)]
    mus = [[] for _ in range(sys.N)]
    costs = [[] for _ in range(sys.N)]
    delays = []
    for k in range(steps):
        d_vec = dist(sys, k)
        rec = step_details(sys, gains, buf, k, d_vec, on_violation=on_violation)
        x_now = [xs[i][-1] for i in range(sys.N)]
        delays.append(rec.delay)
        for i in range(sys.N):
            us[i].append(rec.u[i])
            ds[i].append(np.asarray(d_vec[i], float).ravel())
            mus[i].append(rec.mu[i])
            costs[i].append(stage_cost(x_now[i], rec.u[i], d_vec[i], w["Q"][i], w["R"][i], w["tau"][i]))
            xs[i].append(rec.x_next[i])
    x_arr = tuple(np.array(v) for v in xs)
    delay_arr = np.array(delays, dtype=int)
    V, Vbar, flags = _level_traces(x_arr, delay_arr, sys.h, gains, steps)
    meta = dict(metadata or {})
    meta.setdefault("disturbance", dist.to_dict() if hasattr(dist, "to_dict") else str(dist))
    meta.setdefault("delay_schedule", delay_schedule.to_dict() if hasattr(delay_schedule, "to_dict")
                    else str(delay_schedule))
    return Trajectory(
        x=x_arr,
        u=tuple(np.array(v).reshape(steps, s.m) for v, s in zip(us, sys.subsystems)),
        d=tuple(np.array(v).reshape(steps, s.c) for v, s in zip(ds, sys.subsystems)),
        mu=tuple(np.array(v).reshape(steps, s.rule_count) for v, s in zip(mus, sys.subsystems)),
        delay=delay_arr,
        stage_cost=tuple(np.array(c) for c in costs),
        V=V, Vbar=Vbar, in_rpi=flags, h=sys.h, weights=w, metadata=meta)


def _level_traces(x_arr, delay_arr, h, gains, steps):
    N = len(x_arr)
    if gains is None or getattr(gains, "X", None) is None:
        nan = tuple(np.full(steps + 1, np.nan) for _ in range(N))
        return nan, nan, tuple(np.zeros(steps + 1, bool) for _ in range(N))
    V, Vbar, flags = [], [], []
    for i in range(N):
        X, s = np.asarray(gains.X[i]), gains.sigma[i]
        v_all = np.array([level_value(x, X, s) for x in x_arr[i]])  # k = -h..steps
        v = v_all[h:]
        # the delay of the last recorded step is reused for the final sample
        offs = [delay_arr[min(k, steps - 1)] if steps else -1 for k in range(steps + 1)]
        vd = np.array([v_all[h + k + offs[k]] for k in range(steps + 1)])
        vb = np.maximum(v, vd)
        V.append(v)
        Vbar.append(vb)
        flags.append(vb <= s)
    return tuple(V), tuple(Vbar), tuple(flags)


def razumikhin_values(traj: Trajectory, X, sigma, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``V(k) = x'Px`` and ``Vbar(k) = max(V(k + d(k)), V(k))`` for subsystem ``i``."""
    v_all = np.array([level_value(x, X, sigma) for x in traj.x[i]])
    h, steps = traj.h, traj.steps
    v = v_all[h:]
    offs = [traj.delay[min(k, steps - 1)] if steps else -1 for k in range(steps + 1)]
    vd = np.array([v_all[h + k + offs[k]] for k in range(steps + 1)])
    return v, np.maximum(v, vd)


def total_cost(traj: Trajectory, gains) -> tuple[np.ndarray, np.ndarray]:
    """Accumulated cost ``J_i(t) = sum_{s<t} Pi_i(s) + V_i(x_i(t))`` on the realized run.

    Returns the per-subsystem array (``N x (steps+1)``) and the total over
    subsystems.  The terminal weight is ``X_i / sigma_i`` when the gains carry
    shapes, otherwise zero.
    """
    J = []
    for i in range(traj.N):
        acc = np.concatenate([[0.0], np.cumsum(traj.stage_cost[i])])
        if gains is not None and getattr(gains, "X", None) is not None:
            term = np.array([level_value(x, gains.X[i], gains.sigma[i]) for x in traj.states(i)])
        else:
            term = np.zeros_like(acc)
        J.append(acc + term)
    J = np.array(J)
    return J, J.sum(axis=0)


# ---------------------------------------------------------------------------
# certificate checks
# ---------------------------------------------------------------------------


@dataclass
class MonteCarloReport:
    samples: int
    exits: int
    decrease_violations: int
    worst_exit: float
    worst_decrease: float
    exits_per_subsystem: list

    @property
    def violations(self) -> int:
        return self.exits + self.decrease_violations


def verify_rpi_montecarlo(sys: LargeScaleSystem, gains, hp, samples: int = 10_000, seed: int = 0,
                          tol: float = 1e-9) -> MonteCarloReport:
    """Sample ``(x_i, x_id)`` from every level set and ``d_i`` from its ball; step once.

    Counts exits of ``x_i^+`` from its level set (relative tolerance ``tol``)
    and violations of the summed one-step level inequality
    ``sum_i [s_i(x_i^+) - (1 - lam_i) max(s_i(x_i), s_i(x_id)) - lam_i d_i'd_i / gamma_i^2] <= tol``
    with ``s_i(x) = x'X_i x / sigma_i^2``.
    """
    rng = np.random.default_rng(seed)
    N = sys.N
    X = [np.asarray(x, float) for x in gains.X]
    sig = list(gains.sigma)
    xs = [ellipsoid_sample(rng, X[i], sig[i], samples) for i in range(N)]
    xds = [ellipsoid_sample(rng, X[i], sig[i], samples) for i in range(N)]
    dss = [sys.gamma[i] * unit_ball_sample(rng, s.c, samples) for i, s in enumerate(sys.subsystems)]
    exits = np.zeros(N, int)
    dec = 0
    worst_exit, worst_dec = -np.inf, -np.inf
    for t in range(samples):
        x_all = [xs[i][t] for i in range(N)]
        total = 0.0
        for i, sub in enumerate(sys.subsystems):
            mu = evaluate_membership(sub, x_all[i])
            bl = blend(sub, mu)
            u = control_output(gains, i, mu, x_all[i])
            xp = (bl.A @ x_all[i] + bl.B @ u + bl.A_d @ xds[i][t] + bl.w @ dss[i][t]
                  + interaction_term(sys, i, x_all))
            s_plus = xp @ X[i] @ xp / sig[i] ** 2
            s_prev = max(x_all[i] @ X[i] @ x_all[i], xds[i][t] @ X[i] @ xds[i][t]) / sig[i] ** 2
            d = dss[i][t]
            gam2 = sys.gamma[i] ** 2
            total += s_plus - (1 - hp.lam[i]) * s_prev - (hp.lam[i] * (d @ d) / gam2 if gam2 > 0 else 0.0)
            worst_exit = max(worst_exit, s_plus - 1.0)
            if s_plus > 1.0 + tol:
                exits[i] += 1
        worst_dec = max(worst_dec, total)
        if total > tol:
            dec += 1
    rep = MonteCarloReport(samples, int(exits.sum()), dec, float(worst_exit), float(worst_dec), exits.tolist())
    logger.info("rpi monte carlo: %s", rep)
    return rep


def psi_bounds(gains, i: int) -> tuple[float, float]:
    """Eigenvalue sandwich ``psi_min |x|^2 <= V_i(x) <= psi_max |x|^2``."""
    ev = np.linalg.eigvalsh(gains.P(i))
    return float(ev[0]), float(ev[-1])


@dataclass
class DecreaseReport:
    residuals: list  # per subsystem, per step
    max_residual: float
    failures: list  # (subsystem, step)
    psi: list = field(default_factory=list)
    margin: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def verify_iss_decrease(traj: Trajectory, gains, hp, margin: float = 0.0, tol: float = 1e-12) -> DecreaseReport:
    """Pointwise ``V(x(k+1)) - Vbar(k) + x'Qx - tau d'd <= -margin`` for every subsystem and step."""
    res, fails = [], []
    worst = -np.inf
    for i in range(traj.N):
        V, Vbar = razumikhin_values(traj, gains.X[i], gains.sigma[i], i)
        xs = traj.states(i)
        r = []
        for k in range(traj.steps):
            x, d = xs[k], traj.d[i][k]
            val = V[k + 1] - Vbar[k] + x @ np.asarray(hp.Q[i]) @ x - hp.tau[i] * (d @ d)
            r.append(float(val))
            if val > -margin + tol:
                fails.append((i, k))
        res.append(r)
        if r:
            worst = max(worst, max(r))
    rep = DecreaseReport(res, float(worst), fails, [psi_bounds(gains, i) for i in range(traj.N)], margin)
    if fails:
        logger.warning("ISS decrease fails at %d (subsystem, step) pairs", len(fails))
    return rep


def verify_terminal_decrease(traj: Trajectory, coord, gains, hp, sys: LargeScaleSystem,
                             margin: float = 0.0, tol: float = 1e-12) -> DecreaseReport:
    """``sum_i V_i(x_i(k+1)) - V_i(x_i(k)) < -sum_i H_i(k)`` at nonzero in-set states.

    ``H_i = x'Qx + u'Ru - tau d'd + delta_i'(z_i - sum_j f_ij x_j)`` uses the
    frozen coordination values (``coord`` may be ``None`` for ``delta = z = 0``).
    The strict inequality cannot hold at the origin, which is skipped.
    """
    N = traj.N
    res, fails = [], []
    for k in range(traj.steps):
        x_all = [traj.state(i, k) for i in range(N)]
        if all(np.allclose(x, 0.0) for x in x_all) or not all(traj.in_rpi[i][k] for i in range(N)):
            res.append(np.nan)
            continue
        total = 0.0
        for i in range(N):
            x, xp, u, d = x_all[i], traj.state(i, k + 1), traj.u[i][k], traj.d[i][k]
            H = stage_cost(x, u, d, hp.Q[i], hp.R[i], hp.tau[i])
            if coord is not None:
                delta_i, z_i = coord.delta_at(i, k), coord.z_at(i, k)
                H += float(delta_i @ (z_i - interaction_term(sys, i, x_all)))
            total += level_value(xp, gains.X[i], gains.sigma[i]) - level_value(x, gains.X[i], gains.sigma[i]) + H
        res.append(float(total))
        if total > -margin + tol:
            fails.append((None, k))
    finite = [r for r in res if np.isfinite(r)]
    return DecreaseReport([res], float(max(finite)) if finite else -np.inf, fails,
                          [psi_bounds(gains, i) for i in range(N)], margin)


def settling_step(states: np.ndarray, band: float) -> int | None:
    """First step after which ``|x|_inf <= band`` for the rest of the run; ``None`` if never."""
    inside = np.max(np.abs(states), axis=1) <= band
    if not inside[-1]:
        return None
    k = len(inside)
    while k > 0 and inside[k - 1]:
        k -= 1
    return k


def input_violations(traj: Trajectory, sys: LargeScaleSystem, hp) -> list:
    """``(i, k)`` pairs with ``u'u > H_i`` or ``|u|_inf > u_max``, counted at in-set steps."""
    out = []
    for i in range(traj.N):
        Hm = hp.H_matrix(i, sys.subsystems[i].m)
        umax = np.asarray(sys.u_max[i], float).ravel()
        for k in range(traj.steps):
            if not traj.in_rpi[i][k]:
                continue
            u = traj.u[i][k]
            energy_ok = np.all(np.linalg.eigvalsh(Hm - np.outer(u, u)) >= -1e-12)
            if not energy_ok or np.any(np.abs(u) > umax + 1e-12):
                out.append((i, k))
    return out


def default_initial_state(gains, direction=None, scale: float = 0.5) -> list[np.ndarray]:
    """``x_i(0) = c_i [1, -1, ...]`` with ``c_i`` putting it at ``scale`` of the level-set boundary."""
    out = []
    for i in range(gains.N):
        X = np.asarray(gains.X[i], float)
        v = np.array([(-1.0) ** j for j in range(X.shape[0])]) if direction is None else \
            np.asarray(direction[i], float)
        out.append(scale * gains.sigma[i] / np.sqrt(v @ X @ v) * v)
    return out
