"""Invariant-set, input, terminal and level matrix inequalities, and gain synthesis.

Shape matrices, contraction rates and weights are fixed hyperparameters; the
unknowns of every per-subsystem problem are the rule gains ``k_i^l``, the level
scalar ``sigma_i``, the input slack ``Z_i`` and the co-state scaling
``X_bar_i``.  With those unknowns each block is affine, so the problem is a
semidefinite program.

Rule vertices: blended matrices are replaced by the rule-``l`` plant matrices
and gain ``k^m`` for every ordered pair ``(l, m)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import sdp_core
from .errors import (
    CoordinationStateStale,
    DimensionMismatch,
    InfeasibleSynthesis,
    InvalidHyperparams,
    SingularSchurPivot,
    SingularX,
)
from .fuzzy_model import LargeScaleSystem
from .sdp_core import AffineMatrix, LmiBlock, SdpProblem

logger = logging.getLogger(__name__)

COND_LIMIT = 1e10
STRICT_FAMILIES = ("rpi", "terminal")


# ---------------------------------------------------------------------------
# hyperparameters and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisHyperparams:
    """Fixed data of the per-subsystem problems; per-subsystem tuples are indexed by position."""

    lam: tuple
    X: tuple
    varpi: tuple
    tau: tuple
    H: tuple
    Q: tuple
    R: tuple
    rho: tuple
    alpha: float = 2.0
    eps: float = sdp_core.DEFAULT_EPS
    gain_bound: float = 1e3
    xbar_bound: float = 1e3
    x_mu_rule: str = "shared"

    @classmethod
    def uniform(cls, N: int, *, lam, X, varpi=0.5, tau=1.0, H=5.0, Q=None, R=None,
                rho=0.5, **kw) -> "SynthesisHyperparams":
        def per(v):
            return tuple(v) if isinstance(v, (list, tuple)) else (v,) * N
        Xs = tuple(np.array(x, dtype=float) for x in X)
        n = Xs[0].shape[0]
        Q = np.eye(n) if Q is None else Q
        R = np.eye(1) if R is None else R
        return cls(lam=per(lam), X=Xs, varpi=per(varpi), tau=per(tau), H=per(H),
                   Q=per(np.array(Q, float)) if not isinstance(Q, (list, tuple)) else tuple(np.array(q, float) for q in Q),
                   R=per(np.atleast_2d(np.array(R, float))) if not isinstance(R, (list, tuple)) else tuple(np.atleast_2d(np.array(r, float)) for r in R),
                   rho=per(rho), **kw)

    @property
    def N(self) -> int:
        return len(self.lam)

    def rho_d(self, i: int) -> float:
        return 1.0 - self.rho[i]

    def validate(self, sys: LargeScaleSystem | None = None) -> None:
        N = self.N
        for name in ("X", "varpi", "tau", "H", "Q", "R", "rho"):
            if len(getattr(self, name)) != N:
                raise InvalidHyperparams(f"{name} needs {N} entries")
        for i in range(N):
            if not 0.0 < self.lam[i] < 1.0:
                raise InvalidHyperparams(f"lambda[{i}] = {self.lam[i]} must lie in (0, 1)")
            if not 0.0 <= self.rho[i] <= 1.0:
                raise InvalidHyperparams(f"rho[{i}] = {self.rho[i]} must lie in [0, 1]")
            if self.varpi[i] <= 0 or self.tau[i] <= 0:
                raise InvalidHyperparams("varpi and tau must be positive")
            if np.ndim(self.H[i]) == 0 and self.H[i] <= 0:
                raise InvalidHyperparams("H must be positive")
            X = np.asarray(self.X[i], dtype=float)
            if X.ndim != 2 or X.shape[0] != X.shape[1] or not np.allclose(X, X.T, atol=1e-12):
                raise InvalidHyperparams(f"X[{i}] must be a symmetric matrix")
            if np.linalg.eigvalsh(X)[0] <= 0:
                raise InvalidHyperparams(f"X[{i}] must be positive definite")
            if np.linalg.eigvalsh(0.5 * (self.Q[i] + self.Q[i].T))[0] < -1e-12:
                raise InvalidHyperparams("Q must be positive semidefinite")
            if np.linalg.eigvalsh(0.5 * (self.R[i] + self.R[i].T))[0] <= 0:
                raise InvalidHyperparams("R must be positive definite")
        if self.alpha < 2:
            raise InvalidHyperparams("alpha must be at least 2")
        if self.eps < 0:
            raise InvalidHyperparams("strictness margin must be non-negative")
        if self.x_mu_rule != "shared":
            raise InvalidHyperparams("only the rule-independent shape matrix is supported")
        if sys is not None:
            if sys.N != N:
                raise InvalidHyperparams(f"hyperparameters cover {N} subsystems, system has {sys.N}")
            for i, sub in enumerate(sys.subsystems):
                if self.X[i].shape != (sub.n, sub.n) or self.Q[i].shape != (sub.n, sub.n):
                    raise InvalidHyperparams(f"X[{i}] and Q[{i}] must be {sub.n}x{sub.n}")
                if self.R[i].shape != (sub.m, sub.m):
                    raise InvalidHyperparams(f"R[{i}] must be {sub.m}x{sub.m}")

    def H_matrix(self, i: int, m: int) -> np.ndarray:
        H = np.asarray(self.H[i], dtype=float)
        return H * np.eye(m) if H.ndim == 0 else H

    def to_dict(self) -> dict:
        return {
            "lam": list(self.lam), "X": [np.asarray(x).tolist() for x in self.X],
            "varpi": list(self.varpi), "tau": list(self.tau),
            "H": [np.asarray(h).tolist() for h in self.H],
            "Q": [q.tolist() for q in self.Q], "R": [r.tolist() for r in self.R],
            "rho": list(self.rho), "alpha": self.alpha, "eps": self.eps,
            "gain_bound": self.gain_bound, "xbar_bound": self.xbar_bound,
            "x_mu_rule": self.x_mu_rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisHyperparams":
        d = dict(d)
        d["X"] = tuple(np.array(x, float) for x in d["X"])
        d["Q"] = tuple(np.array(q, float) for q in d["Q"])
        d["R"] = tuple(np.atleast_2d(np.array(r, float)) for r in d["R"])
        d["H"] = tuple(float(h) if np.ndim(h) == 0 else np.array(h, float) for h in d["H"])
        for key in ("lam", "varpi", "tau", "rho"):
            d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


@dataclass(frozen=True)
class GainSet:
    k: tuple
    sigma: tuple
    Z: tuple
    X_bar: tuple
    certificate_margins: dict = field(default_factory=dict)
    X: tuple | None = None

    @property
    def N(self) -> int:
        return len(self.k)

    def P(self, i: int) -> np.ndarray:
        """Quadratic weight of the level function ``V_i = x' P_i x``."""
        return np.asarray(self.X[i]) / self.sigma[i]

    def certified(self, tol: float = sdp_core.DEFAULT_VERIFY_TOL) -> bool:
        """Strict families strictly negative, the non-strict ones within ``tol``."""
        if not self.certificate_margins:
            return False
        for fam in self.certificate_margins.values():
            for name, v in fam.items():
                if (v >= 0) if name in STRICT_FAMILIES else (v > tol):
                    return False
        return True

    def implied_gamma_sq(self, hp: SynthesisHyperparams) -> list[float]:
        return [s / hp.varpi[i] for i, s in enumerate(self.sigma)]

    def scaled(self, factor: float) -> "GainSet":
        """Copy with every gain multiplied by ``factor`` and no certificate."""
        return replace(self, k=tuple(tuple(factor * np.asarray(g) for g in ks) for ks in self.k),
                       certificate_margins={})

    def to_dict(self) -> dict:
        return {
            "k": [[np.asarray(g).tolist() for g in ks] for ks in self.k],
            "sigma": [float(s) for s in self.sigma],
            "Z": [np.asarray(z).tolist() for z in self.Z],
            "X_bar": [np.asarray(x).ravel().tolist() for x in self.X_bar],
            "X": None if self.X is None else [np.asarray(x).tolist() for x in self.X],
            "certificate_margins": {str(i): m for i, m in self.certificate_margins.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GainSet":
        if not d or "k" not in d or not d["k"]:
            raise DimensionMismatch("gain file holds no gains")
        N = len(d["k"])
        k = tuple(tuple(np.atleast_2d(np.array(g, float)) for g in ks) for ks in d["k"])
        n = [ks[0].shape[1] for ks in k]
        return cls(
            k=k,
            sigma=tuple(float(s) for s in d.get("sigma", [1.0] * N)),
            Z=tuple(np.array(z, float) for z in d.get("Z", [np.zeros((ni, ni)) for ni in n])),
            X_bar=tuple(np.array(x, float).ravel() for x in d.get("X_bar", [np.zeros(ni) for ni in n])),
            certificate_margins={int(i): m for i, m in d.get("certificate_margins", {}).items()},
            X=None if d.get("X") is None else tuple(np.array(x, float) for x in d["X"]),
        )


@dataclass(frozen=True)
class CoordinationValues:
    """Frozen multipliers and interaction estimate seen by one subsystem's terminal block."""

    delta: tuple  # delta_j for every subsystem j (length-N tuple of vectors)
    z: np.ndarray  # z_i
    iteration: int = 0


# ---------------------------------------------------------------------------
# decision-vector layout
# ---------------------------------------------------------------------------


class Layout:
    """Positions of ``k^1..k^r`` (row-major), ``sigma``, ``Z`` (upper triangle) and ``X_bar``."""

    def __init__(self, r: int, m: int, n: int):
        self.r, self.m, self.n = r, m, n
        self.k_off = 0
        self.sigma_off = r * m * n
        self.Z_off = self.sigma_off + 1
        self.tri = [(a, b) for a in range(n) for b in range(a, n)]
        self.Xbar_off = self.Z_off + len(self.tri)
        self.nvar = self.Xbar_off + n

    def gain(self, l: int) -> AffineMatrix:
        out = AffineMatrix.zeros((self.m, self.n), self.nvar)
        base = self.k_off + l * self.m * self.n
        for a in range(self.m):
            for b in range(self.n):
                out.data[1 + base + a * self.n + b, a, b] = 1.0
        return out

    def sigma(self) -> AffineMatrix:
        out = AffineMatrix.zeros((1, 1), self.nvar)
        out.data[1 + self.sigma_off, 0, 0] = 1.0
        return out

    def Z(self) -> AffineMatrix:
        out = AffineMatrix.zeros((self.n, self.n), self.nvar)
        for t, (a, b) in enumerate(self.tri):
            out.data[1 + self.Z_off + t, a, b] = 1.0
            out.data[1 + self.Z_off + t, b, a] = 1.0
        return out

    def X_bar(self) -> AffineMatrix:
        out = AffineMatrix.zeros((self.n, 1), self.nvar)
        for a in range(self.n):
            out.data[1 + self.Xbar_off + a, a, 0] = 1.0
        return out

    def pack(self, k: Sequence, sigma: float, Z=None, X_bar=None) -> np.ndarray:
        y = np.zeros(self.nvar)
        for l, g in enumerate(k):
            y[self.k_off + l * self.m * self.n: self.k_off + (l + 1) * self.m * self.n] = \
                np.asarray(g, float).reshape(-1)
        y[self.sigma_off] = sigma
        if Z is not None:
            Z = np.asarray(Z, float)
            for t, (a, b) in enumerate(self.tri):
                y[self.Z_off + t] = Z[a, b]
        if X_bar is not None:
            y[self.Xbar_off:] = np.asarray(X_bar, float).ravel()
        return y

    def unpack(self, y) -> tuple:
        y = np.asarray(y, float)
        k = [y[self.k_off + l * self.m * self.n: self.k_off + (l + 1) * self.m * self.n]
             .reshape(self.m, self.n) for l in range(self.r)]
        Z = np.zeros((self.n, self.n))
        for t, (a, b) in enumerate(self.tri):
            Z[a, b] = Z[b, a] = y[self.Z_off + t]
        return k, float(y[self.sigma_off]), Z, y[self.Xbar_off:].copy()

    def bounds(self, hp: SynthesisHyperparams) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.nvar, -np.inf)
        hi = np.full(self.nvar, np.inf)
        lo[: self.sigma_off] = -hp.gain_bound
        hi[: self.sigma_off] = hp.gain_bound
        lo[self.Xbar_off:] = -hp.xbar_bound
        hi[self.Xbar_off:] = hp.xbar_bound
        return lo, hi


def layout_for(sys: LargeScaleSystem, i: int) -> Layout:
    sub = sys.subsystems[i]
    return Layout(sub.rule_count, sub.m, sub.n)


# ---------------------------------------------------------------------------
# block builders
# ---------------------------------------------------------------------------


def _coupling_sum(sys: LargeScaleSystem, hp: SynthesisHyperparams, i: int) -> np.ndarray:
    sub = sys.subsystems[i]
    C = np.zeros((sub.n, sub.n))
    for j in sys.neighbours(i):
        f = sub.f[j]
        C += f.T @ hp.X[j] @ f
    return C


def _common_rows(sys, hp, i, vertex, layout):
    """Pieces shared by the invariant-set and terminal blocks at rule vertex ``(l, m)``."""
    l, m = vertex
    sub = sys.subsystems[i]
    if not (0 <= l < sub.rule_count and 0 <= m < sub.rule_count):
        raise DimensionMismatch(f"vertex {vertex} outside {sub.rule_count} rules")
    X = np.asarray(hp.X[i], float)
    A, B, Ad, w = sub.A[l], sub.B[l], sub.A_d[l], sub.w[l]
    k = layout.gain(m)
    Theta = B @ k + A  # affine in k^m
    XTheta = X @ Theta
    sa = np.sqrt(hp.alpha)
    js = sys.neighbours(i)
    fs = [sub.f[j] for j in js]
    return dict(sub=sub, X=X, A=A, B=B, Ad=Ad, w=w, k=k, Theta=Theta, XTheta=XTheta,
                sa=sa, alpha=hp.alpha, js=js, fs=fs, N=sys.N)


def build_rpi_lmi(sys: LargeScaleSystem, hp: SynthesisHyperparams, i: int, vertex: tuple,
                  layout: Layout | None = None) -> AffineMatrix:
    """Invariant-set block; rows ``[d; x; x_d; x_j (j != i, ascending); slack]``."""
    layout = layout or layout_for(sys, i)
    c = _common_rows(sys, hp, i, vertex, layout)
    X, Ad, w, XTheta, sa, N = c["X"], c["Ad"], c["w"], c["XTheta"], c["sa"], c["N"]
    lam, rho, rho_d = hp.lam[i], hp.rho[i], hp.rho_d(i)
    nv = layout.nvar
    sigma = layout.sigma()

    dd = w.T @ X @ w - (lam * hp.varpi[i]) * sigma
    xd = XTheta.T @ w
    xx = N * sa * _coupling_sum(sys, hp, i) - rho * (1 - lam) * X
    xdd = Ad.T @ X @ w
    xdx = Ad.T @ XTheta
    xdxd = Ad.T @ X @ Ad - (1 - lam) * rho_d * X
    return _assemble(c, nv, dd, xd, AffineMatrix.constant(xx, nv), xdd, xdx, xdxd,
                     extra_rows=[], slack=True)


def _assemble(c, nv, dd, xd, xx, xdd, xdx, xdxd, extra_rows, slack):
    """Lower-triangular rows -> full symmetric block.

    ``extra_rows`` are ``(cols_dxxd, cols_j, cols_prev_extra, diag)`` tuples placed
    between the interconnection rows and the slack row.
    """
    X, w, Ad, XTheta, sa, fs = c["X"], c["w"], c["Ad"], c["XTheta"], c["sa"], c["fs"]
    N = c["N"]
    n = X.shape[0]
    # lower triangle, row by row; None = zero
    rows = [[dd], [xd, xx], [xdd, xdx, xdxd]]
    for a, fa in enumerate(fs):
        row = [fa.T @ X @ w, (1 - sa) * (fa.T @ XTheta), fa.T @ X @ Ad]
        for b in range(a + 1):
            row.append(-(c["alpha"] - 1.0) * (fa.T @ X @ fs[b]))
        rows.append(row)
    for extra in extra_rows:
        rows.append(extra)
    if slack:
        row = [None, XTheta, None] + [None] * len(fs) + [None] * len(extra_rows)
        row.append(-(1.0 / N) * X.T)
        rows.append(row)
    return _symmetric_from_lower(rows, nv)


def _symmetric_from_lower(rows, nv) -> AffineMatrix:
    nb = len(rows)
    sizes = [None] * nb
    for a, row in enumerate(rows):
        if len(row) != a + 1:
            raise DimensionMismatch(f"row {a} has {len(row)} blocks, expected {a + 1}")
        sizes[a] = _dims(row[a])[0]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    out = np.zeros((nv + 1, offs[-1], offs[-1]))
    for a, row in enumerate(rows):
        for b, blk in enumerate(row):
            if blk is None:
                continue
            if _dims(blk) != (sizes[a], sizes[b]):
                raise DimensionMismatch(f"block ({a},{b}) has shape {_dims(blk)}, "
                                        f"expected {(sizes[a], sizes[b])}")
            ra, rb = slice(offs[a], offs[a + 1]), slice(offs[b], offs[b + 1])
            if isinstance(blk, AffineMatrix):
                out[:, ra, rb] = blk.data
                if b != a:
                    out[:, rb, ra] = blk.data.transpose(0, 2, 1)
            else:
                blk = np.atleast_2d(np.asarray(blk, float))
                out[0, ra, rb] = blk
                if b != a:
                    out[0, rb, ra] = blk.T
    return AffineMatrix(out)


def _dims(b) -> tuple:
    if isinstance(b, AffineMatrix) or (isinstance(b, np.ndarray) and b.ndim == 2):
        return b.shape
    return np.atleast_2d(b).shape


def _check_coord(sys, i, coord: CoordinationValues | None, iteration: int | None):
    sub = sys.subsystems[i]
    if coord is None:
        return [np.zeros(sys.subsystems[j].n) for j in range(sys.N)], np.zeros(sub.n)
    if iteration is not None and coord.iteration != iteration:
        raise CoordinationStateStale(
            f"coordination values from iteration {coord.iteration}, caller expects {iteration}")
    delta = [np.asarray(d, float).ravel() for d in coord.delta]
    z = np.asarray(coord.z, float).ravel()
    if len(delta) != sys.N or z.shape != (sub.n,):
        raise DimensionMismatch("coordination values do not match the system")
    for j in sys.neighbours(i):
        if delta[j].shape != (sub.n,):
            raise DimensionMismatch("multiplier of neighbour j must have the dimension of x_i")
    if delta[i].shape != (sub.n,):
        raise DimensionMismatch("own multiplier must have the dimension of x_i")
    return delta, z


def build_terminal_lmi(sys: LargeScaleSystem, hp: SynthesisHyperparams, i: int, vertex: tuple,
                       coord: CoordinationValues | None = None, layout: Layout | None = None,
                       iteration: int | None = None) -> AffineMatrix:
    """Terminal block; rows ``[d; x; x_d; x_j...; coordination; input energy; slack]``."""
    layout = layout or layout_for(sys, i)
    c = _common_rows(sys, hp, i, vertex, layout)
    delta, z = _check_coord(sys, i, coord, iteration)
    X, Ad, w, XTheta, sa, N, k = c["X"], c["Ad"], c["w"], c["XTheta"], c["sa"], c["N"], c["k"]
    nv = layout.nvar
    sigma = layout.sigma()
    Xbar = layout.X_bar()
    sub = c["sub"]
    Hm = hp.H_matrix(i, sub.m)

    dd = w.T @ X @ w - hp.tau[i] * sigma
    xd = XTheta.T @ w
    xx = (AffineMatrix.constant((N * sa) * _coupling_sum(sys, hp, i) - hp.rho[i] * X, nv)
          + _sigma_times(sigma, hp.Q[i]))
    xdd = Ad.T @ X @ w
    xdx = Ad.T @ XTheta
    xdxd = Ad.T @ X @ Ad - hp.rho_d(i) * X

    # coordination row: zeros under d, x, x_d; couplings under x_j; scalar diagonal
    coord_row = [None, None, None]
    for j, f in zip(c["js"], c["fs"]):
        coord_row.append(-0.5 * (Xbar.T @ f + _sigma_times(sigma, delta[j][None, :] @ f)))
    coord_row.append(Xbar.T @ z[:, None] + _sigma_times(sigma, np.atleast_2d(delta[i] @ z)))
    energy_row = [None, Hm @ k, None] + [None] * len(c["fs"]) + [None, -Hm]
    return _assemble(c, nv, dd, xd, xx, xdd, xdx, xdxd,
                     extra_rows=[coord_row, energy_row], slack=True)


def _sigma_times(sigma: AffineMatrix, M) -> AffineMatrix:
    """``sigma * M`` for the scalar decision ``sigma`` and a constant matrix ``M``."""
    M = np.atleast_2d(np.asarray(M, float))
    return AffineMatrix(sigma.data[:, :1, :1] * M[None])


def build_input_constraint_lmi(hp: SynthesisHyperparams, i: int, l: int, layout: Layout,
                               u_max) -> list[AffineMatrix]:
    """``[[Z, k^T], [k, I]] >= 0`` and ``Z_ss <= u_max_s^2``, returned in ``<= 0`` form."""
    k = layout.gain(l)
    Z = layout.Z()
    m = layout.m
    u_max = np.asarray(u_max, float).ravel()
    if u_max.shape != (m,):
        raise DimensionMismatch(f"u_max needs {m} entries")
    if m > layout.n:
        raise DimensionMismatch("more input channels than diagonal entries of Z")
    outer = -AffineMatrix.bmat([[Z, k.T], [k, np.eye(m)]], layout.nvar)
    diag = []
    for s in range(m):
        e = AffineMatrix(Z.data[:, s:s + 1, s:s + 1]) - u_max[s] ** 2
        diag.append(e)
    return [outer] + diag


def build_level_lmi(x_point, X, layout: Layout) -> AffineMatrix:
    """``[[sigma, x^T], [x, X^{-1} sigma]] >= 0`` in ``<= 0`` form."""
    X = np.asarray(X, float)
    if np.linalg.cond(X) > COND_LIMIT:
        raise SingularX(f"shape matrix condition number {np.linalg.cond(X):.3g} exceeds 1e10")
    Xinv = np.linalg.inv(X)
    Xinv = 0.5 * (Xinv + Xinv.T)
    x = np.asarray(x_point, float).reshape(-1, 1)
    sigma = layout.sigma()
    blk = AffineMatrix.bmat([[sigma, x.T], [x, _sigma_times(sigma, Xinv)]], layout.nvar)
    return -blk


# ---------------------------------------------------------------------------
# direct expansions and the Schur oracle
# ---------------------------------------------------------------------------


def expand_rpi_direct(sys, hp, i, vertex, k_rules, sigma) -> np.ndarray:
    """Slack row eliminated by hand: ``N Theta' X Theta`` moves into the state block."""
    l, m = vertex
    sub = sys.subsystems[i]
    X = np.asarray(hp.X[i], float)
    A, B, Ad, w = sub.A[l], sub.B[l], sub.A_d[l], sub.w[l]
    Th = A + B @ np.asarray(k_rules[m], float)
    N = sys.N
    lam, rho, rho_d, a = hp.lam[i], hp.rho[i], hp.rho_d(i), hp.alpha
    C = sum((sub.f[j].T @ hp.X[j] @ sub.f[j] for j in sys.neighbours(i)), np.zeros((sub.n, sub.n)))
    phi = N * Th.T @ X @ Th + N * np.sqrt(a) * C - rho * (1 - lam) * X
    rows = [w.T @ X @ w - sigma * lam * hp.varpi[i], Th.T @ X @ w, phi, Ad.T @ X @ w, Ad.T @ X @ Th,
            Ad.T @ X @ Ad - (1 - lam) * rho_d * X]
    return _direct(sys, i, X, w, Th, Ad, a, rows)


def expand_terminal_direct(sys, hp, i, vertex, k_rules, sigma, X_bar, coord=None) -> np.ndarray:
    """Input-energy and slack rows eliminated by hand."""
    l, m = vertex
    sub = sys.subsystems[i]
    delta, z = _check_coord(sys, i, coord, None)
    X = np.asarray(hp.X[i], float)
    A, B, Ad, w = sub.A[l], sub.B[l], sub.A_d[l], sub.w[l]
    k = np.asarray(k_rules[m], float)
    Th = A + B @ k
    N = sys.N
    a = hp.alpha
    Hm = hp.H_matrix(i, sub.m)
    C = sum((sub.f[j].T @ hp.X[j] @ sub.f[j] for j in sys.neighbours(i)), np.zeros((sub.n, sub.n)))
    chi = (N * Th.T @ X @ Th + N * np.sqrt(a) * C - hp.rho[i] * X + sigma * hp.Q[i]
           + k.T @ Hm @ k)
    rows = [w.T @ X @ w - sigma * hp.tau[i], Th.T @ X @ w, chi, Ad.T @ X @ w, Ad.T @ X @ Th,
            Ad.T @ X @ Ad - hp.rho_d(i) * X]
    base = _direct(sys, i, X, w, Th, Ad, a, rows)
    xb = np.asarray(X_bar, float).ravel()
    js = sys.neighbours(i)
    crow = np.zeros((1, base.shape[0] + 1))
    col = sub.c + 2 * sub.n  # past the d, x and x_d columns
    for j in js:
        nj = sys.subsystems[j].n
        crow[0, col:col + nj] = -0.5 * (xb + sigma * delta[j]) @ sub.f[j]
        col += nj
    crow[0, -1] = sigma * delta[i] @ z + xb @ z
    out = np.zeros((base.shape[0] + 1,) * 2)
    out[:-1, :-1] = base
    out[-1, :] = crow
    out[:, -1] = crow.ravel()
    return out


def _direct(sys, i, X, w, Th, Ad, a, rows) -> np.ndarray:
    dd, xd, xx, xdd, xdx, xdxd = rows
    sub = sys.subsystems[i]
    js = sys.neighbours(i)
    sizes = [sub.c, sub.n, sub.n] + [sys.subsystems[j].n for j in js]
    off = np.concatenate([[0], np.cumsum(sizes)])
    M = np.zeros((off[-1], off[-1]))

    def put(r, c_, blk):
        M[off[r]:off[r + 1], off[c_]:off[c_ + 1]] = blk
        if r != c_:
            M[off[c_]:off[c_ + 1], off[r]:off[r + 1]] = np.asarray(blk).T

    put(0, 0, dd)
    put(1, 0, xd)
    put(1, 1, xx)
    put(2, 0, xdd)
    put(2, 1, xdx)
    put(2, 2, xdxd)
    for p, j in enumerate(js):
        f = sub.f[j]
        put(3 + p, 0, f.T @ X @ w)
        put(3 + p, 1, (1 - np.sqrt(a)) * f.T @ X @ Th)
        put(3 + p, 2, f.T @ X @ Ad)
        for q, jj in enumerate(js[:p + 1]):
            put(3 + p, 3 + q, -(a - 1) * f.T @ X @ sub.f[jj])
    return M


def schur_complement(M: np.ndarray, pivot: int) -> np.ndarray:
    """Eliminate the trailing ``pivot`` rows/columns of symmetric ``M``."""
    M = np.asarray(M, float)
    A = M[:-pivot, :-pivot]
    Bm = M[:-pivot, -pivot:]
    D = M[-pivot:, -pivot:]
    if np.linalg.cond(D) > 1e12:
        raise SingularSchurPivot("pivot block is numerically singular")
    return A - Bm @ np.linalg.solve(D, Bm.T)


def schur_oracle_check(block_at_point: np.ndarray, expanded_at_point: np.ndarray,
                       pivot: int) -> float:
    """Max element deviation between the Schur-complemented block and its direct expansion."""
    S = schur_complement(block_at_point, pivot)
    if S.shape != expanded_at_point.shape:
        raise DimensionMismatch(f"shapes {S.shape} and {expanded_at_point.shape} differ")
    return float(np.abs(S - expanded_at_point).max(initial=0.0))


def rpi_schur_deviation(sys, hp, i, vertex, k_rules, sigma) -> float:
    layout = layout_for(sys, i)
    y = layout.pack(k_rules, sigma)
    blk = build_rpi_lmi(sys, hp, i, vertex, layout).evaluate(y)
    return schur_oracle_check(blk, expand_rpi_direct(sys, hp, i, vertex, k_rules, sigma),
                              sys.subsystems[i].n)


def terminal_schur_deviation(sys, hp, i, vertex, k_rules, sigma, X_bar, coord=None) -> float:
    layout = layout_for(sys, i)
    y = layout.pack(k_rules, sigma, X_bar=X_bar)
    blk = build_terminal_lmi(sys, hp, i, vertex, coord, layout).evaluate(y)
    pivot = sys.subsystems[i].n + sys.subsystems[i].m
    return schur_oracle_check(blk, expand_terminal_direct(sys, hp, i, vertex, k_rules, sigma,
                                                          X_bar, coord), pivot)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

FAMILIES = ("rpi", "input", "terminal", "level")


@dataclass
class SubsystemProblem:
    problem: SdpProblem
    layout: Layout
    families: dict  # block name -> family


def assemble_subsystem_problem(sys: LargeScaleSystem, hp: SynthesisHyperparams, i: int,
                               coord: CoordinationValues | None, x_history: Sequence,
                               families: Sequence[str] = FAMILIES,
                               iteration: int | None = None) -> SubsystemProblem:
    sub = sys.subsystems[i]
    layout = layout_for(sys, i)
    blocks, fam = [], {}

    def add(name, mat, family, eps):
        blocks.append(LmiBlock.from_affine(name, mat, eps))
        fam[name] = family

    vertices = list(itertools.product(range(sub.rule_count), repeat=2))
    if "rpi" in families:
        for v in vertices:
            add(f"rpi{v}", build_rpi_lmi(sys, hp, i, v, layout), "rpi", hp.eps)
    if "terminal" in families:
        for v in vertices:
            add(f"terminal{v}", build_terminal_lmi(sys, hp, i, v, coord, layout, iteration),
                "terminal", hp.eps)
    if "input" in families:
        for l in range(sub.rule_count):
            parts = build_input_constraint_lmi(hp, i, l, layout, sys.u_max[i])
            add(f"input[{l}]", parts[0], "input", 0.0)
            if l == 0:
                for s, p in enumerate(parts[1:]):
                    add(f"input_diag[{s}]", p, "input", 0.0)
    if "level" in families:
        for p, x in enumerate(x_history):
            add(f"level[{p}]", build_level_lmi(x, hp.X[i], layout), "level", 0.0)
    add("sigma_pos", -layout.sigma(), "level", hp.eps)
    c = np.zeros(layout.nvar)
    c[layout.sigma_off] = 1.0
    lo, hi = layout.bounds(hp)
    problem = SdpProblem(layout.nvar, blocks, objective=c, bounds=(lo, hi))
    return SubsystemProblem(problem, layout, fam)


def _family_margins(reports, families) -> dict:
    out: dict = {}
    for r in reports:
        f = families[r.name]
        out[f] = max(out.get(f, -np.inf), r.reduced_max_eig)
    return out


def synthesize_subsystem(sys, hp, i, coord=None, x_history=(), families=FAMILIES,
                         tol=sdp_core.DEFAULT_SOLVE_TOL, iteration=None):
    sp = assemble_subsystem_problem(sys, hp, i, coord, x_history, families, iteration)
    sol = sdp_core.solve(sp.problem, tol=tol)
    margins = _family_margins(sol.reports, sp.families)
    strict_ok = sol.feasible and all(r.reduced_max_eig < 0 for r in sol.reports if r.eps > 0)
    if not strict_ok:
        failed = sorted({sp.families[r.name] for r in sol.reports
                         if r.reduced_max_eig > -r.eps + 1e-9
                         or r.residual > sdp_core.DEFAULT_VERIFY_TOL})
        raise InfeasibleSynthesis(
            f"subsystem {i}: {sol.status.value} ({sol.message}); failing families {failed}",
            subsystem=i, failed_families=failed, margins=margins, hyperparams=hp,
            best_effort=sol)
    k, sigma, Z, Xbar = sp.layout.unpack(sol.y)
    return k, sigma, Z, Xbar, margins, sol


def synthesize(sys: LargeScaleSystem, hp: SynthesisHyperparams,
               coord: Sequence[CoordinationValues] | None = None,
               x_history: Sequence | None = None, families: Sequence[str] = FAMILIES,
               tol: float = sdp_core.DEFAULT_SOLVE_TOL, iteration: int | None = None,
               workers: int = 1) -> GainSet:
    """Solve every subsystem's problem independently and collect verified gains.

    ``x_history`` lists, per subsystem, the state samples the level set must
    contain; ``coord`` lists per-subsystem frozen coordination values.
    """
    hp.validate(sys)
    N = sys.N
    x_history = x_history if x_history is not None else [[] for _ in range(N)]
    coord = coord if coord is not None else [None] * N

    def task(i):
        return synthesize_subsystem(sys, hp, i, coord[i], x_history[i], families, tol, iteration)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, range(N)))
    else:
        results = [task(i) for i in range(N)]
    ks, sigmas, Zs, Xbars, margins = [], [], [], [], {}
    for i, (k, sigma, Z, Xbar, fam, _) in enumerate(results):
        ks.append(tuple(k))
        sigmas.append(sigma)
        Zs.append(Z)
        Xbars.append(Xbar)
        margins[i] = {f: float(v) for f, v in fam.items()}
        logger.info("subsystem %d: sigma=%.6g margins=%s", i, sigma, margins[i])
    return GainSet(tuple(ks), tuple(sigmas), tuple(Zs), tuple(Xbars), margins,
                   X=tuple(np.asarray(x, float) for x in hp.X))


def certify_gains(sys: LargeScaleSystem, hp: SynthesisHyperparams, gains: GainSet,
                  coord: Sequence[CoordinationValues] | None = None,
                  x_history: Sequence | None = None, families: Sequence[str] = FAMILIES) -> dict:
    """Evaluate every block at a frozen gain set (no solve); returns per-subsystem family margins."""
    out = {}
    coord = coord if coord is not None else [None] * sys.N
    x_history = x_history if x_history is not None else [[] for _ in range(sys.N)]
    for i in range(sys.N):
        sp = assemble_subsystem_problem(sys, hp, i, coord[i], x_history[i], families)
        y = sp.layout.pack(gains.k[i], gains.sigma[i], gains.Z[i], gains.X_bar[i])
        bases = sdp_core.block_bases(sp.problem)
        reports = sdp_core.verify_certificate(sp.problem.blocks, y, bases)
        out[i] = {f: float(v) for f, v in _family_margins(reports, sp.families).items()}
    return out


def grid_search(sys, hp: SynthesisHyperparams, lam_grid: Sequence[float],
                X_scales: Sequence[float], **kw) -> tuple[GainSet, SynthesisHyperparams]:
    """Outer search over a common contraction rate and a common shape-matrix scaling."""
    last = None
    for s in X_scales:
        for lam in lam_grid:
            trial = replace(hp, lam=(lam,) * hp.N, X=tuple(s * np.asarray(x) for x in hp.X))
            try:
                return synthesize(sys, trial, **kw), trial
            except InfeasibleSynthesis as exc:
                last = exc
    raise last if last is not None else InvalidHyperparams("empty search grid")


# ---------------------------------------------------------------------------
# shape-matrix tuning
# ---------------------------------------------------------------------------


def max_margin_gains(sys, hp, i, coord=None, families=("rpi", "input", "terminal"),
                     tol=sdp_core.DEFAULT_SOLVE_TOL):
    """Gains of subsystem ``i`` that minimize the worst strict-block eigenvalue at fixed shapes."""
    sp = assemble_subsystem_problem(sys, hp, i, coord, (), families)
    strict = [b.name for b in sp.problem.blocks if sp.families[b.name] in STRICT_FAMILIES]
    wm = sdp_core.with_margin_variable(sp.problem, strict, floor=-float(np.trace(hp.X[i])))
    sol = sdp_core.solve(wm, tol=tol)
    k, sigma, Z, Xbar = sp.layout.unpack(sol.y[:-1])
    return k, sigma, Z, Xbar, float(sol.y[-1])


def _shape_step(sys, hp, ks, coord, floor_frac=0.05, tol=sdp_core.DEFAULT_SOLVE_TOL):
    """Best shapes ``X_1..X_N`` (trace fixed per subsystem) for frozen gains.

    Every strict block is affine in the shapes, the level scalars and the
    co-state scalings once gains are fixed; coefficients are read off by
    probing the builders at unit directions.
    """
    N = sys.N
    ns = [s.n for s in sys.subsystems]
    tris = [[(a, b) for a in range(n) for b in range(a, n)] for n in ns]
    # variable offsets: per subsystem [tri(X_i), sigma_i, X_bar_i]
    offs, pos = [], 0
    for i in range(N):
        offs.append(pos)
        pos += len(tris[i]) + 1 + ns[i]
    nv = pos
    coord = coord if coord is not None else [None] * N

    def shapes_from(y):
        Xs = []
        for i in range(N):
            X = np.zeros((ns[i], ns[i]))
            for t, (a, b) in enumerate(tris[i]):
                X[a, b] = X[b, a] = y[offs[i] + t]
            Xs.append(X)
        return Xs

    def numeric_block(fam, i, v, y):
        Xs = shapes_from(y)
        trial = replace(hp, X=tuple(Xs))
        layout = layout_for(sys, i)
        o = offs[i] + len(tris[i])
        yi = layout.pack(ks[i], y[o], X_bar=y[o + 1:o + 1 + ns[i]])
        if fam == "rpi":
            return build_rpi_lmi(sys, trial, i, v, layout).evaluate(yi)
        return build_terminal_lmi(sys, trial, i, v, coord[i], layout).evaluate(yi)

    blocks = []
    for i in range(N):
        r = sys.subsystems[i].rule_count
        for fam in ("rpi", "terminal"):
            for v in itertools.product(range(r), repeat=2):
                base = numeric_block(fam, i, v, np.zeros(nv))
                coeffs = np.zeros((nv + 1,) + base.shape)
                coeffs[0] = base
                for q in range(nv):
                    e = np.zeros(nv)
                    e[q] = 1.0
                    coeffs[q + 1] = numeric_block(fam, i, v, e) - base
                blocks.append(LmiBlock(f"{fam}{v}@{i}", coeffs, 0.0))
    strict = [b.name for b in blocks]
    eq_rows, eq_rhs = [], []
    for i in range(N):
        T = float(np.trace(hp.X[i]))
        # shape floor X_i >= floor_frac * (T / n) I
        c = np.zeros((nv + 1, ns[i], ns[i]))
        c[0] = floor_frac * T / ns[i] * np.eye(ns[i])
        for t, (a, b) in enumerate(tris[i]):
            c[1 + offs[i] + t, a, b] -= 1.0
            if a != b:
                c[1 + offs[i] + t, b, a] -= 1.0
        blocks.append(LmiBlock(f"shape_floor@{i}", c, 0.0))
        row = np.zeros(nv)
        for t, (a, b) in enumerate(tris[i]):
            if a == b:
                row[offs[i] + t] = 1.0
        eq_rows.append(row)
        eq_rhs.append(T)
        sc = np.zeros((nv + 1, 1, 1))
        sc[1 + offs[i] + len(tris[i])] = -1.0
        blocks.append(LmiBlock(f"sigma_pos@{i}", sc, 0.0))
    lo = np.full(nv, -np.inf)
    hi = np.full(nv, np.inf)
    for i in range(N):
        o = offs[i] + len(tris[i]) + 1
        lo[o:o + ns[i]] = -hp.xbar_bound
        hi[o:o + ns[i]] = hp.xbar_bound
    prob = SdpProblem(nv, blocks, bounds=(lo, hi), equalities=(np.array(eq_rows), np.array(eq_rhs)))
    floor = -max(float(np.trace(x)) for x in hp.X)
    wm = sdp_core.with_margin_variable(prob, strict, floor=floor)
    sol = sdp_core.solve(wm, tol=tol)
    return tuple(shapes_from(sol.y[:-1])), float(sol.y[-1])


def tune_shapes(sys: LargeScaleSystem, hp: SynthesisHyperparams, rounds: int = 8,
                coord=None, target: float | None = None, tol: float = sdp_core.DEFAULT_SOLVE_TOL):
    """Alternate between max-margin gains and max-margin shapes at fixed traces.

    Returns the hyperparameters with the best shapes found and the history of
    worst strict-block eigenvalues (one entry per round, both half-steps).
    This only selects hyperparameters; certification is left to :func:`synthesize`.
    """
    hp.validate(sys)
    coord = coord if coord is not None else [None] * sys.N
    target = -1e-3 * min(float(np.trace(x)) for x in hp.X) if target is None else target
    history = []
    best = (np.inf, hp)
    for _ in range(rounds):
        ks, worst = [], -np.inf
        for i in range(sys.N):
            k, _, _, _, t = max_margin_gains(sys, hp, i, coord[i], tol=tol)
            ks.append(k)
            worst = max(worst, t)
        history.append(worst)
        if worst < best[0]:
            best = (worst, hp)
        if worst <= target:
            break
        Xs, t = _shape_step(sys, hp, ks, coord, tol=tol)
        Xs = tuple(0.5 * (x + x.T) for x in Xs)
        hp = replace(hp, X=Xs)
        history.append(t)
        logger.info("shape tuning: gain step %.4g, shape step %.4g", worst, t)
    return best[1], history
