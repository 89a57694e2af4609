"""Delayed Takagi-Sugeno large-scale plant: memberships, blending, control law, dynamics.

Subsystem positions are 0-based everywhere in the Python API; the ``index``
field of :class:`SubsystemRules` keeps the 1-based label used in reports and
system files.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    AllZeroWeights,
    BufferUnderflow,
    DimensionMismatch,
    DisturbanceBoundViolation,
    MissingGain,
    PremiseOutOfRange,
)

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-300


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# membership functions
# ---------------------------------------------------------------------------


class Cos2Membership:
    """Two rules: ``mu1 = cos(z[state_index])**2`` and ``mu2 = 1 - mu1``."""

    kind = "cos2"
    rule_count = 2

    def __init__(self, state_index: int = 1):
        self.state_index = int(state_index)

    @property
    def arity(self) -> int:
        return self.state_index + 1

    def __call__(self, z: np.ndarray) -> np.ndarray:
        c = np.cos(z[self.state_index]) ** 2
        return np.array([c, 1.0 - c])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "state_index": self.state_index}


class TriangularMembership:
    """Three rules on one premise: left shoulder, centre triangle, right shoulder.

    The shoulders saturate at ``-half_width`` and ``+half_width``.
    """

    kind = "tri3"
    rule_count = 3

    def __init__(self, state_index: int = 0, half_width: float = np.pi / 2):
        if half_width <= 0:
            raise ValueError("half_width must be positive")
        self.state_index = int(state_index)
        self.half_width = float(half_width)

    @property
    def arity(self) -> int:
        return self.state_index + 1

    def __call__(self, z: np.ndarray) -> np.ndarray:
        s = float(np.clip(z[self.state_index] / self.half_width, -1.0, 1.0))
        return np.array([max(-s, 0.0), 1.0 - abs(s), max(s, 0.0)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "state_index": self.state_index,
                "half_width": self.half_width}


class ConstantMembership:
    """Premise-independent weights; handy for single-rule and frozen-premise studies."""

    kind = "constant"

    def __init__(self, weights: Sequence[float]):
        self.weights = np.array(weights, dtype=float)
        self.rule_count = len(self.weights)

    arity = 0

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.weights.copy()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "weights": self.weights.tolist()}


class RestrictedMembership:
    """Barycentric weights of ``base(z)`` inside a simplex of admissible weight vectors.

    ``vertices`` has one row per new rule; each row is a convex weight vector
    over the base rules.  A premise whose base weights leave the simplex raises
    :class:`PremiseOutOfRange`.
    """

    kind = "restricted"

    def __init__(self, base, vertices, tol: float = 1e-9):
        self.base = base
        self.vertices = np.array(vertices, dtype=float)
        r = self.vertices.shape[0]
        if self.vertices.shape != (r, base.rule_count):
            raise DimensionMismatch("restricted vertices must be (rules x base rules)")
        # barycentric system: [V^T; 1^T] nu = [mu; 1]
        self._system = np.vstack([self.vertices.T, np.ones((1, r))])
        if np.linalg.matrix_rank(self._system) < r:
            raise ValueError("restricted vertices must be affinely independent")
        self.rule_count = r
        self.tol = tol

    @property
    def arity(self) -> int:
        return self.base.arity

    def __call__(self, z: np.ndarray) -> np.ndarray:
        mu = evaluate_weights(self.base, z)
        nu, *_ = np.linalg.lstsq(self._system, np.append(mu, 1.0), rcond=None)
        resid = self._system @ nu - np.append(mu, 1.0)
        if nu.min() < -self.tol or np.abs(resid).max() > 1e-8:
            raise PremiseOutOfRange(f"base weights {mu} lie outside the restricted region")
        return np.clip(nu, 0.0, None)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": self.base.to_dict(),
                "vertices": self.vertices.tolist()}


def membership_from_dict(options: dict):
    kind = options.get("kind")
    if kind == "cos2":
        return Cos2Membership(options.get("state_index", 1))
    if kind == "tri3":
        return TriangularMembership(options.get("state_index", 0),
                                    options.get("half_width", np.pi / 2))
    if kind == "constant":
        return ConstantMembership(options["weights"])
    if kind == "restricted":
        return RestrictedMembership(membership_from_dict(options["base"]), options["vertices"])
    raise ValueError(f"unknown membership kind {kind!r}")


def evaluate_weights(membership, z) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if z.size < membership.arity:
        raise DimensionMismatch(
            f"premise has {z.size} entries, membership needs {membership.arity}")
    raw = np.asarray(membership(z), dtype=float)
    if raw.shape != (membership.rule_count,):
        raise DimensionMismatch("membership returned the wrong number of weights")
    if np.any(raw < -1e-12):
        raise ValueError(f"membership produced negative firing strength {raw}")
    raw = np.clip(raw, 0.0, None)
    if np.all(raw < WEIGHT_FLOOR):
        raise AllZeroWeights("every rule fired below 1e-300")
    return raw / raw.sum()


# ---------------------------------------------------------------------------
# plant description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubsystemRules:
    """Per-rule matrices of one fuzzy subsystem.

    ``f`` maps a 0-based neighbour position ``j`` to the interconnection
    matrix ``f_ij`` (shape ``n_i x n_j``).
    """

    index: int
    A: tuple
    B: tuple
    A_d: tuple
    w: tuple
    f: dict
    membership: object
    C_out: np.ndarray | None = None

    def __post_init__(self):
        for name in ("A", "B", "A_d", "w"):
            mats = tuple(_as_matrix(m, f"{name}[{l}]") for l, m in enumerate(getattr(self, name)))
            object.__setattr__(self, name, mats)
        object.__setattr__(self, "f", {int(j): _as_matrix(m, f"f[{j}]") for j, m in self.f.items()})
        if self.C_out is not None:
            object.__setattr__(self, "C_out", _as_matrix(self.C_out, "C_out"))
        r = len(self.A)
        if r == 0:
            raise DimensionMismatch("a subsystem needs at least one rule")
        if not (len(self.B) == len(self.A_d) == len(self.w) == r):
            raise DimensionMismatch("A, B, A_d and w must list the same number of rules")
        n = self.A[0].shape[0]
        m = self.B[0].shape[1]
        c = self.w[0].shape[1]
        for l in range(r):
            if self.A[l].shape != (n, n) or self.A_d[l].shape != (n, n):
                raise DimensionMismatch(f"rule {l}: A and A_d must be {n}x{n}")
            if self.B[l].shape != (n, m):
                raise DimensionMismatch(f"rule {l}: B must be {n}x{m}")
            if self.w[l].shape != (n, c):
                raise DimensionMismatch(f"rule {l}: w must be {n}x{c}")
        for j, fij in self.f.items():
            if fij.shape[0] != n:
                raise DimensionMismatch(f"f[{j}] must have {n} rows")
        if self.membership.rule_count != r:
            raise DimensionMismatch(
                f"membership has {self.membership.rule_count} rules, matrices have {r}")

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def c(self) -> int:
        return self.w[0].shape[1]

    @property
    def rule_count(self) -> int:
        return len(self.A)


@dataclass(frozen=True)
class LargeScaleSystem:
    subsystems: tuple
    h: int
    gamma: np.ndarray
    u_max: tuple

    def __post_init__(self):
        subs = tuple(self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        N = len(subs)
        if N == 0:
            raise DimensionMismatch("system has no subsystems")
        if int(self.h) != self.h or self.h < 1:
            raise ValueError("delay bound h must be an integer >= 1")
        object.__setattr__(self, "h", int(self.h))
        gamma = np.array(self.gamma, dtype=float).ravel()
        if gamma.shape != (N,) or np.any(gamma <= 0):
            raise ValueError("gamma needs one positive radius per subsystem")
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        u_max = tuple(np.array(u, dtype=float).ravel() for u in self.u_max)
        if len(u_max) != N:
            raise ValueError("u_max needs one entry per subsystem")
        for i, (u, sub) in enumerate(zip(u_max, subs)):
            if u.shape != (sub.m,) or np.any(u <= 0):
                raise ValueError(f"u_max[{i}] needs {sub.m} positive bounds")
        object.__setattr__(self, "u_max", u_max)
        # missing interconnections are zero; keep every ordered pair explicit
        for i, sub in enumerate(subs):
            f = dict(sub.f)
            if i in f:
                raise DimensionMismatch(f"subsystem {i} lists a self-interconnection")
            for j, other in enumerate(subs):
                if j == i:
                    continue
                if j not in f:
                    f[j] = _as_matrix(np.zeros((sub.n, other.n)), f"f[{j}]")
                elif f[j].shape != (sub.n, other.n):
                    raise DimensionMismatch(f"f_{i}{j} must be {sub.n}x{other.n}")
            extra = set(f) - set(range(N))
            if extra:
                raise DimensionMismatch(f"subsystem {i} references unknown neighbours {extra}")
            object.__setattr__(sub, "f", f)

    @property
    def N(self) -> int:
        return len(self.subsystems)

    def neighbours(self, i: int) -> list[int]:
        return [j for j in range(self.N) if j != i]

    def zero_state(self) -> list[np.ndarray]:
        return [np.zeros(s.n) for s in self.subsystems]


class Blend(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    A_d: np.ndarray
    w: np.ndarray


def evaluate_membership(sub: SubsystemRules, z) -> np.ndarray:
    """Normalized rule weights of ``sub`` at premise ``z``."""
    return evaluate_weights(sub.membership, z)


def blend(sub: SubsystemRules, mu) -> Blend:
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.shape != (sub.rule_count,):
        raise DimensionMismatch(f"expected {sub.rule_count} weights, got {mu.shape}")
    return Blend(*(np.tensordot(mu, np.stack(mats), axes=1)
                   for mats in (sub.A, sub.B, sub.A_d, sub.w)))


def blended_gain(gains, i: int, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float).ravel()
    ks = gains.k[i] if i < len(gains.k) else ()
    if len(ks) < mu.size:
        raise MissingGain(f"subsystem {i} has {len(ks)} gains for {mu.size} rules")
    return np.tensordot(mu, np.stack([np.asarray(k, dtype=float) for k in ks[:mu.size]]), axes=1)


def control_output(gains, i: int, mu, x_i) -> np.ndarray:
    """Fuzzy state feedback ``u_i = (sum_l mu_l k_i^l) x_i``."""
    return blended_gain(gains, i, mu) @ np.asarray(x_i, dtype=float)


# ---------------------------------------------------------------------------
# delay handling
# ---------------------------------------------------------------------------


class ConstantDelay:
    kind = "constant"

    def __init__(self, delay: int = 1):
        if delay < 1:
            raise ValueError("delay must be at least one step")
        self.delay = int(delay)

    def __call__(self, k: int) -> int:
        return -self.delay

    def to_dict(self) -> dict:
        return {"kind": self.kind, "delay": self.delay}


class PeriodicDelay:
    kind = "periodic"

    def __init__(self, pattern: Sequence[int]):
        if not pattern or min(pattern) < 1:
            raise ValueError("periodic pattern needs positive step delays")
        self.pattern = [int(p) for p in pattern]

    def __call__(self, k: int) -> int:
        return -self.pattern[k % len(self.pattern)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "pattern": self.pattern}


class RandomDelay:
    """Uniform draw from ``{-h, ..., -1}``, reproducible per step index."""

    kind = "random"

    def __init__(self, h: int, seed: int = 0):
        self.h = int(h)
        self.seed = int(seed)
        self._cache: dict[int, int] = {}

    def __call__(self, k: int) -> int:
        if k not in self._cache:
            rng = np.random.default_rng([self.seed, k])
            self._cache[k] = -int(rng.integers(1, self.h + 1))
        return self._cache[k]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "h": self.h, "seed": self.seed}


def delay_schedule_from_dict(options: dict, h: int):
    kind = options.get("kind", "constant")
    if kind == "constant":
        return ConstantDelay(options.get("delay", 1))
    if kind == "periodic":
        return PeriodicDelay(options["pattern"])
    if kind == "random":
        return RandomDelay(options.get("h", h), options.get("seed", 0))
    raise ValueError(f"unknown delay schedule {kind!r}")


@dataclass
class DelayBuffer:
    """Rolling window of the last ``h + 1`` full-system states, newest last."""

    h: int
    delay_schedule: Callable[[int], int] = field(default_factory=ConstantDelay)
    history: deque = field(default=None)

    def __post_init__(self):
        if self.history is None:
            self.history = deque(maxlen=self.h + 1)
        else:
            self.history = deque((tuple(np.array(x, dtype=float) for x in snap)
                                  for snap in self.history), maxlen=self.h + 1)

    @classmethod
    def from_initial(cls, x0, h: int, delay_schedule=None, history=None) -> "DelayBuffer":
        """Build from ``x(0)``, extended backwards as a constant history unless
        ``history`` (snapshots for ``k = -h, ..., 0``, oldest first) is given."""
        snaps = [list(x0)] * (h + 1) if history is None else list(history)
        if len(snaps) != h + 1:
            raise BufferUnderflow(f"initial history needs {h + 1} snapshots, got {len(snaps)}")
        buf = cls(h, delay_schedule or ConstantDelay(1))
        for snap in snaps:
            buf.push(snap)
        return buf

    def push(self, x_all) -> None:
        self.history.append(tuple(np.array(x, dtype=float) for x in x_all))

    @property
    def ready(self) -> bool:
        return len(self.history) == self.h + 1

    def current(self) -> tuple:
        if not self.history:
            raise BufferUnderflow("buffer is empty")
        return self.history[-1]

    def lookup(self, offset: int) -> tuple:
        """States at ``k + offset`` with ``offset`` in ``[-h, 0]``."""
        if not -self.h <= offset <= 0:
            raise BufferUnderflow(f"offset {offset} outside [-{self.h}, 0]")
        if len(self.history) < -offset + 1:
            raise BufferUnderflow(f"only {len(self.history)} snapshots stored")
        return self.history[len(self.history) - 1 + offset]

    def copy(self) -> "DelayBuffer":
        return DelayBuffer(self.h, self.delay_schedule, deque(self.history))


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


class StepRecord(NamedTuple):
    x_next: list
    u: list
    mu: list
    x_delayed: list
    delay: int


def check_disturbance(sys: LargeScaleSystem, d_vec, on_violation: str = "warn",
                      tol: float = 1e-12) -> None:
    for i, d in enumerate(d_vec):
        d = np.asarray(d, dtype=float)
        if d @ d > sys.gamma[i] ** 2 + tol:
            msg = f"disturbance of subsystem {i} has norm {np.sqrt(d @ d):.3g} > gamma {sys.gamma[i]:.3g}"
            if on_violation == "raise":
                raise DisturbanceBoundViolation(msg)
            if on_violation == "warn":
                warnings.warn(msg, RuntimeWarning, stacklevel=3)


def interaction_term(sys: LargeScaleSystem, i: int, x_all) -> np.ndarray:
    s = np.zeros(sys.subsystems[i].n)
    for j in sys.neighbours(i):
        s = s + sys.subsystems[i].f[j] @ np.asarray(x_all[j], dtype=float)
    return s


def step_details(sys: LargeScaleSystem, gains, buffer: DelayBuffer, k: int, d_vec, x_all=None,
                 *, mu_override=None, on_violation: str = "warn", advance: bool = True) -> StepRecord:
    """One closed-loop step, returning everything the simulator records."""
    if not buffer.ready:
        raise BufferUnderflow(f"need {buffer.h + 1} snapshots of history, have {len(buffer.history)}")
    if x_all is None:
        x_all = buffer.current()
    x_all = [np.asarray(x, dtype=float) for x in x_all]
    if len(x_all) != sys.N or len(d_vec) != sys.N:
        raise DimensionMismatch("x_all and d_vec need one entry per subsystem")
    check_disturbance(sys, d_vec, on_violation)
    delay = int(buffer.delay_schedule(k))
    if not -sys.h <= delay <= -1:
        raise ValueError(f"delay schedule returned {delay}, outside [-{sys.h}, -1]")
    delayed = buffer.lookup(delay)
    x_next, us, mus = [], [], []
    for i, sub in enumerate(sys.subsystems):
        x = x_all[i]
        mu = evaluate_membership(sub, x) if mu_override is None else np.asarray(mu_override[i], float)
        bl = blend(sub, mu)
        u = control_output(gains, i, mu, x)
        d = np.asarray(d_vec[i], dtype=float).ravel()
        nxt = bl.A @ x + bl.B @ u + bl.A_d @ delayed[i] + bl.w @ d + interaction_term(sys, i, x_all)
        x_next.append(nxt)
        us.append(u)
        mus.append(mu)
    if advance:
        buffer.push(x_next)
    return StepRecord(x_next, us, mus, [np.array(x) for x in delayed], delay)


def step_closed_loop(sys: LargeScaleSystem, gains, buffer: DelayBuffer, k: int, d_vec,
                     x_all=None, **kwargs) -> list:
    """Advance every subsystem one step under the fuzzy feedback and return ``x(k+1)``."""
    return step_details(sys, gains, buffer, k, d_vec, x_all, **kwargs).x_next
