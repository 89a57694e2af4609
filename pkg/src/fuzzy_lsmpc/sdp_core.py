"""Affine symmetric-matrix constraints, an interior-point backend and eigenvalue verification.

Every constraint block has the form ``F(y) = F_0 + sum_v y_v F_v <= -eps * I``.
Blocks are assembled with :class:`AffineMatrix`, whose ``data`` array stacks
the constant term (index 0) and one coefficient matrix per decision variable.

Two kinds of structural degeneracy are removed before handing a problem to
the solver, and recorded so verification can apply the same split:

* a diagonal entry with identically zero coefficients forces its whole row
  to vanish; those rows become linear equalities on ``y``;
* directions annihilated by every coefficient matrix (after the equalities are
  substituted) can never be made negative; strictness is imposed on the
  orthogonal complement only, and the complement is checked to be numerically
  zero at the returned point.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers

from .errors import NonSymmetricAssembly, NumericalFailure

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-7
DEFAULT_SOLVE_TOL = 1e-8
DEFAULT_VERIFY_TOL = 1e-6
_ZERO = 1e-13


# ---------------------------------------------------------------------------
# affine matrix algebra
# ---------------------------------------------------------------------------


class AffineMatrix:
    """Matrix-valued affine function of a decision vector ``y`` of length ``nvar``."""

    __array_ufunc__ = None  # let ndarray @ AffineMatrix dispatch to __rmatmul__

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3:
            raise ValueError("AffineMatrix data must be (nvar + 1, rows, cols)")
        self.data = data

    @classmethod
    def constant(cls, value, nvar: int) -> "AffineMatrix":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        data = np.zeros((nvar + 1,) + value.shape)
        data[0] = value
        return cls(data)

    @classmethod
    def zeros(cls, shape, nvar: int) -> "AffineMatrix":
        return cls(np.zeros((nvar + 1,) + tuple(shape)))

    @property
    def nvar(self) -> int:
        return self.data.shape[0] - 1

    @property
    def shape(self) -> tuple:
        return self.data.shape[1:]

    @property
    def T(self) -> "AffineMatrix":
        return AffineMatrix(self.data.transpose(0, 2, 1))

    def _lift(self, other) -> np.ndarray:
        if isinstance(other, AffineMatrix):
            return other.data
        other = np.atleast_2d(np.asarray(other, dtype=float))
        out = np.zeros_like(self.data) if other.shape == self.shape else None
        if out is None:
            if other.size == 1:
                out = np.zeros_like(self.data)
                out[0] = other.item()
                return out
            raise ValueError(f"shape mismatch {other.shape} vs {self.shape}")
        out[0] = other
        return out

    def __add__(self, other):
        return AffineMatrix(self.data + self._lift(other))

    __radd__ = __add__

    def __neg__(self):
        return AffineMatrix(-self.data)

    def __sub__(self, other):
        return AffineMatrix(self.data - self._lift(other))

    def __rsub__(self, other):
        return AffineMatrix(self._lift(other) - self.data)

    def __mul__(self, scalar):
        if isinstance(scalar, AffineMatrix) or np.ndim(scalar) != 0:
            raise TypeError("AffineMatrix only supports scalar multiplication; use @")
        return AffineMatrix(self.data * float(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, AffineMatrix):
            raise TypeError("product of two affine matrices is not affine")
        return AffineMatrix(self.data @ np.atleast_2d(np.asarray(other, dtype=float)))

    def __rmatmul__(self, other):
        return AffineMatrix(np.atleast_2d(np.asarray(other, dtype=float)) @ self.data)

    def sym(self) -> "AffineMatrix":
        return AffineMatrix(0.5 * (self.data + self.data.transpose(0, 2, 1)))

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.nvar:
            raise ValueError(f"expected {self.nvar} decision values, got {y.size}")
        return self.data[0] + np.tensordot(y, self.data[1:], axes=1)

    def asymmetry(self) -> float:
        return float(np.abs(self.data - self.data.transpose(0, 2, 1)).max(initial=0.0))

    @staticmethod
    def bmat(rows: Sequence[Sequence], nvar: int) -> "AffineMatrix":
        """Block assembly; ``None`` entries are zero blocks sized from their row/column."""
        heights = []
        for row in rows:
            h = {(_shape(b)[0]) for b in row if b is not None}
            if len(h) != 1:
                raise ValueError(f"inconsistent block heights {h}")
            heights.append(h.pop())
        widths = []
        for c in range(len(rows[0])):
            w = {(_shape(row[c])[1]) for row in rows if row[c] is not None}
            if len(w) != 1:
                raise ValueError(f"inconsistent block widths {w} in column {c}")
            widths.append(w.pop())
        out = np.zeros((nvar + 1, sum(heights), sum(widths)))
        r0 = 0
        for row, h in zip(rows, heights):
            c0 = 0
            for b, w in zip(row, widths):
                if b is not None:
                    if isinstance(b, AffineMatrix):
                        out[:, r0:r0 + h, c0:c0 + w] = b.data
                    else:
                        out[0, r0:r0 + h, c0:c0 + w] = np.atleast_2d(b)
                c0 += w
            r0 += h
        return AffineMatrix(out)


def _shape(b) -> tuple:
    return b.shape if isinstance(b, AffineMatrix) else np.atleast_2d(b).shape


# ---------------------------------------------------------------------------
# problem / solution types
# ---------------------------------------------------------------------------


class SdpStatus(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class LmiBlock:
    """``coeffs[0] + sum_v y_v coeffs[v + 1] <= -eps * I``."""

    name: str
    coeffs: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise ValueError(f"block {self.name!r} must be square")
        if self.eps < 0:
            raise ValueError("strictness margin must be non-negative")
        c = 0.5 * (c + c.transpose(0, 2, 1))
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_affine(cls, name: str, mat: AffineMatrix, eps: float = DEFAULT_EPS,
                    check: float | None = 1e-12) -> "LmiBlock":
        if check is not None:
            scale = max(1.0, float(np.abs(mat.data).max(initial=0.0)))
            if mat.asymmetry() > check * scale:
                raise NonSymmetricAssembly(
                    f"block {name!r} is asymmetric by {mat.asymmetry():.3g}")
        return cls(name, mat.data, eps)

    @property
    def size(self) -> int:
        return self.coeffs.shape[1]

    def evaluate(self, y) -> np.ndarray:
        return self.coeffs[0] + np.tensordot(np.asarray(y, float), self.coeffs[1:], axes=1)


@dataclass(frozen=True)
class SdpProblem:
    decision_dim: int
    blocks: tuple
    objective: np.ndarray | None = None
    bounds: tuple | None = None
    equalities: tuple | None = None
    names: tuple | None = None

    def __post_init__(self):
        blocks = tuple(self.blocks)
        for b in blocks:
            if b.coeffs.shape[0] != self.decision_dim + 1:
                raise ValueError(f"block {b.name!r} has the wrong number of coefficients")
        object.__setattr__(self, "blocks", blocks)
        if self.objective is not None:
            c = np.asarray(self.objective, dtype=float).ravel()
            if c.size != self.decision_dim:
                raise ValueError("objective length must equal decision_dim")
            object.__setattr__(self, "objective", c)
        if self.bounds is not None:
            lo, hi = (np.broadcast_to(np.asarray(v, dtype=float), (self.decision_dim,)).copy()
                      for v in self.bounds)
            if np.any(lo > hi):
                raise ValueError("lower bound above upper bound")
            object.__setattr__(self, "bounds", (lo, hi))


@dataclass
class BlockReport:
    name: str
    max_eig: float
    min_eig: float
    reduced_max_eig: float
    residual: float
    eps: float

    @property
    def strict(self) -> bool:
        return self.reduced_max_eig < 0


@dataclass
class SdpSolution:
    status: SdpStatus
    y: np.ndarray
    margin: float
    objective_value: float | None = None
    reports: list = field(default_factory=list)
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status is SdpStatus.FEASIBLE

    def failed_blocks(self, tol: float = 0.0) -> list[str]:
        return [r.name for r in self.reports if r.reduced_max_eig > -r.eps + tol]


# ---------------------------------------------------------------------------
# structural reduction
# ---------------------------------------------------------------------------


@dataclass
class _Reduction:
    y0: np.ndarray
    T: np.ndarray  # y = y0 + T z
    consistent: bool
    bases: list  # per block orthonormal basis of the structural range


def _null_space(M: np.ndarray, rtol: float = 1e-10) -> tuple[np.ndarray, int]:
    if M.size == 0:
        return np.eye(M.shape[1]), 0
    _, s, vt = np.linalg.svd(M)
    rank = int(np.sum(s > rtol * max(s.max(initial=0.0), 1.0)))
    return vt[rank:].T, rank


def _range_basis(stack: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    if stack.size == 0:
        return np.zeros((stack.shape[0], 0))
    u, s, _ = np.linalg.svd(stack, full_matrices=False)
    rank = int(np.sum(s > rtol * max(s.max(initial=0.0), 1.0)))
    return u[:, :rank]


def _substituted(block: LmiBlock, y0: np.ndarray, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lin = block.coeffs[1:]
    const = block.coeffs[0] + np.tensordot(y0, lin, axes=1)
    return const, np.tensordot(T.T, lin, axes=1)


def structural_reduction(problem: SdpProblem) -> _Reduction:
    """Equality elimination for forced-zero rows, then per-block range bases."""
    n = problem.decision_dim
    y0 = np.zeros(n)
    T = np.eye(n)
    consistent = True
    if problem.equalities is not None:
        A, b = (np.atleast_2d(np.asarray(problem.equalities[0], float)),
                np.asarray(problem.equalities[1], float).ravel())
        y0, T, consistent = _impose(A, b, y0, T)
    for _ in range(sum(b.size for b in problem.blocks) + 1):
        rows, rhs = [], []
        for blk in problem.blocks:
            const, lin = _substituted(blk, y0, T)
            scale = max(np.abs(blk.coeffs).max(initial=0.0), 1.0)
            for p in range(blk.size):
                if abs(const[p, p]) > _ZERO * scale or np.any(np.abs(lin[:, p, p]) > _ZERO * scale):
                    continue
                row_c, row_l = const[p], lin[:, p, :]
                if np.all(np.abs(row_l) <= _ZERO * scale) and np.all(np.abs(row_c) <= _ZERO * scale):
                    continue
                for q in range(blk.size):
                    rows.append(row_l[:, q])
                    rhs.append(-row_c[q])
        if not rows:
            break
        z0, Tz, ok = _impose(np.array(rows), np.array(rhs), np.zeros(T.shape[1]), np.eye(T.shape[1]))
        y0 = y0 + T @ z0
        T = T @ Tz
        consistent &= ok
        if not ok:
            break
    bases = []
    for blk in problem.blocks:
        const, lin = _substituted(blk, y0, T)
        stack = np.concatenate([const[None], lin], axis=0).transpose(1, 0, 2).reshape(blk.size, -1)
        bases.append(_range_basis(stack))
    return _Reduction(y0, T, consistent, bases)


def _impose(A: np.ndarray, b: np.ndarray, y0: np.ndarray, T: np.ndarray):
    """Restrict ``y = y0 + T z`` to ``A y = b``."""
    M = A @ T
    r = b - A @ y0
    z, *_ = np.linalg.lstsq(M, r, rcond=None)
    scale = max(np.abs(M).max(initial=0.0), np.abs(r).max(initial=0.0), 1.0)
    ok = bool(np.abs(M @ z - r).max(initial=0.0) <= 1e-9 * scale)
    N, _ = _null_space(M)
    return y0 + T @ z, T @ N, ok


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


def block_bases(problem: SdpProblem) -> list:
    return structural_reduction(problem).bases


def verify_certificate(blocks: Sequence[LmiBlock], y, bases: Sequence | None = None) -> list[BlockReport]:
    """Extreme eigenvalues of every block evaluated at ``y``.

    With ``bases`` (orthonormal columns per block) the strict margin is taken
    on that subspace and ``residual`` reports how far the block is from
    vanishing on its orthogonal complement.
    """
    y = np.asarray(y, dtype=float)
    out = []
    for idx, blk in enumerate(blocks):
        F = blk.evaluate(y)
        F = 0.5 * (F + F.T)
        eig = np.linalg.eigvalsh(F)
        if bases is None or bases[idx] is None:
            red, resid = float(eig[-1]), 0.0
        else:
            U = bases[idx]
            if U.shape[1] == 0:
                red = -np.inf
            else:
                red = float(np.linalg.eigvalsh(U.T @ F @ U)[-1])
            P = np.eye(F.shape[0]) - U @ U.T
            resid = float(np.abs(F @ P).max(initial=0.0))
        out.append(BlockReport(blk.name, float(eig[-1]), float(eig[0]), red, resid, blk.eps))
    return out


def margin_of(reports: Sequence[BlockReport]) -> float:
    return max((r.reduced_max_eig for r in reports), default=-np.inf)


def reports_pass(reports: Sequence[BlockReport], tol: float = DEFAULT_VERIFY_TOL) -> bool:
    return all(r.reduced_max_eig <= tol and r.residual <= tol and r.max_eig <= tol for r in reports)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _lower_bounds(problem: SdpProblem, red: _Reduction):
    """Box bounds on ``y`` as ``G z <= h`` rows; also a consistency flag for pinned entries."""
    rows, rhs = [], []
    ok = True
    if problem.bounds is None:
        return np.zeros((0, red.T.shape[1])), np.zeros(0), ok
    lo, hi = problem.bounds
    for v in range(problem.decision_dim):
        t = red.T[v]
        fixed = np.all(np.abs(t) <= _ZERO)
        for sign, lim in ((1.0, hi[v]), (-1.0, -lo[v])):
            if not np.isfinite(lim):
                continue
            if fixed:
                ok &= sign * red.y0[v] <= lim + 1e-12
            else:
                rows.append(sign * t)
                rhs.append(lim - sign * red.y0[v])
    return np.array(rows).reshape(-1, red.T.shape[1]), np.array(rhs), ok


def _conic_data(problem: SdpProblem, red: _Reduction, extra_t: bool):
    """Scaled reduced blocks as cvxopt ``Gs``/``hs`` lists."""
    nz = red.T.shape[1]
    Gs, hs, kept = [], [], []
    for blk, U in zip(problem.blocks, red.bases):
        if U.shape[1] == 0:
            continue
        const, lin = _substituted(blk, red.y0, red.T)
        c_red = U.T @ const @ U
        l_red = np.einsum("ia,vij,jb->vab", U, lin, U) if nz else np.zeros((0,) + c_red.shape)
        scale = max(np.abs(c_red).max(initial=0.0), np.abs(l_red).max(initial=0.0), 1e-12)
        s = U.shape[1]
        cols = [l_red[v].T.reshape(-1) / scale for v in range(nz)]
        if extra_t:
            cols.append(-np.eye(s).reshape(-1))
            h = -c_red / scale
        else:
            h = -c_red / scale - blk.eps / scale * np.eye(s)
        G = np.column_stack(cols) if cols else np.zeros((s * s, 0))
        Gs.append(G)
        hs.append(h)
        kept.append((blk.name, scale))
    return Gs, hs, kept


def _used_columns(problem: SdpProblem, red: _Reduction) -> np.ndarray:
    nz = red.T.shape[1]
    used = np.zeros(nz, dtype=bool)
    for blk, U in zip(problem.blocks, red.bases):
        if U.shape[1] == 0 or nz == 0:
            continue
        _, lin = _substituted(blk, red.y0, red.T)
        l_red = np.einsum("ia,vij,jb->vab", U, lin, U)
        used |= np.abs(l_red).reshape(nz, -1).max(axis=1) > _ZERO
    if problem.objective is not None and nz:
        used |= np.abs(problem.objective @ red.T) > _ZERO
    return used


def _run_cvxopt(c, Gl, hl, Gs, hs, tol, max_iter):
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol,
            "maxiters": max_iter}
    nz = c.size
    if nz == 0:
        return None
    if Gl.shape[0] == 0:
        Gl = np.zeros((1, nz))
        hl = np.ones(1)
    try:
        res = solvers.sdp(cvx_matrix(c), Gl=cvx_matrix(Gl), hl=cvx_matrix(hl),
                          Gs=[cvx_matrix(G) for G in Gs], hs=[cvx_matrix(h) for h in hs],
                          options=opts)
    except (ValueError, ArithmeticError) as exc:
        raise NumericalFailure(f"interior-point solver failed: {exc}") from exc
    return res


def solve(problem: SdpProblem, tol: float = DEFAULT_SOLVE_TOL, max_iter: int = 200,
          verify_tol: float = DEFAULT_VERIFY_TOL, retries: int = 2) -> SdpSolution:
    """Minimize the objective (or find a point) subject to every block, then verify.

    Numerical breakdowns of the interior-point method are retried with a
    tolerance ten times looser, ``retries`` times.
    """
    for attempt in range(retries + 1):
        try:
            return _solve_once(problem, tol * 10 ** attempt, max_iter, verify_tol)
        except NumericalFailure:
            if attempt == retries:
                raise
            logger.debug("retrying with tolerance %.1e", tol * 10 ** (attempt + 1))
    raise AssertionError("unreachable")


def with_margin_variable(problem: SdpProblem, names: Sequence[str] | None = None,
                         floor: float = -1e6) -> SdpProblem:
    """Append ``t`` to the decision vector, shift the named blocks by ``-t I`` and minimize ``t``.

    The shift acts on the structural range of each block only, so the optimum
    is the best achievable worst-case eigenvalue on that range.
    """
    n = problem.decision_dim
    bases = structural_reduction(problem).bases
    blocks = []
    for b, U in zip(problem.blocks, bases):
        c = np.concatenate([b.coeffs, np.zeros((1,) + b.coeffs.shape[1:])], axis=0)
        if names is None or b.name in names:
            c[-1] = -(U @ U.T)  # structurally zero directions stay unshifted
            blocks.append(LmiBlock(b.name, c, 0.0))
        else:
            blocks.append(LmiBlock(b.name, c, b.eps))
    obj = np.zeros(n + 1)
    obj[-1] = 1.0
    if problem.bounds is not None:
        lo = np.append(problem.bounds[0], floor)
        hi = np.append(problem.bounds[1], np.inf)
    else:
        lo = np.append(np.full(n, -np.inf), floor)
        hi = np.full(n + 1, np.inf)
    eq = None
    if problem.equalities is not None:
        A, bb = problem.equalities
        eq = (np.hstack([np.atleast_2d(A), np.zeros((np.atleast_2d(A).shape[0], 1))]), bb)
    return SdpProblem(n + 1, blocks, objective=obj, bounds=(lo, hi), equalities=eq)


def _solve_once(problem: SdpProblem, tol: float, max_iter: int, verify_tol: float) -> SdpSolution:
    red = structural_reduction(problem)
    if not red.consistent:
        return _infeasible(problem, red, "forced-zero rows are inconsistent", tol, max_iter)
    used = _used_columns(problem, red)
    Gl_full, hl, bounds_ok = _lower_bounds(problem, red)
    if not bounds_ok:
        return _infeasible(problem, red, "fixed variables violate their bounds", tol, max_iter)
    # bound rows that only touch unused columns still constrain nothing we optimise
    sub = _Reduction(red.y0, red.T[:, used], True, red.bases)
    Gl = Gl_full[:, used]
    keep = np.any(np.abs(Gl) > _ZERO, axis=1)
    if np.any(hl[~keep] < -1e-12):
        return _infeasible(problem, red, "bounds exclude the pinned point", tol, max_iter)
    Gl, hl = Gl[keep], hl[keep]
    nz = int(used.sum())
    c = (problem.objective @ sub.T) if problem.objective is not None else np.zeros(nz)
    Gs, hs, _ = _conic_data(problem, sub, extra_t=False)

    if nz == 0:
        y = sub.y0.copy()
        status = "optimal"
    else:
        res = _run_cvxopt(c, Gl, hl, Gs, hs, tol, max_iter)
        status = res["status"]
        if res["x"] is None:
            return _infeasible(problem, red, f"solver status {status}", tol, max_iter, sub, Gl, hl)
        y = sub.y0 + sub.T @ np.array(res["x"]).ravel()

    reports = verify_certificate(problem.blocks, y, red.bases)
    margin = margin_of(reports)
    bounds_hold = _bounds_hold(problem, y, verify_tol)
    obj = float(problem.objective @ y) if problem.objective is not None else None
    verified = reports_pass(reports, verify_tol) and bounds_hold
    logger.debug("sdp status=%s margin=%.3g verified=%s", status, margin, verified)
    if status == "optimal" and verified:
        return SdpSolution(SdpStatus.FEASIBLE, y, margin, obj, reports, "optimal")
    if status == "optimal" and not verified:
        return SdpSolution(SdpStatus.NUMERICAL_FAILURE, y, margin, obj, reports,
                           "solver reported optimal but verification failed")
    if status == "unknown":
        if verified and all(r.reduced_max_eig <= -r.eps + verify_tol for r in reports):
            return SdpSolution(SdpStatus.FEASIBLE, y, margin, obj, reports,
                               "iteration limit reached at a verified point")
        best = _best_effort(problem, sub, Gl, hl, tol, max_iter)
        if best is not None and best.margin > 0:
            return best
        return SdpSolution(SdpStatus.MAX_ITER, y, margin, obj, reports, "iteration limit reached")
    return _infeasible(problem, red, f"solver status {status}", tol, max_iter, sub, Gl, hl)


def _bounds_hold(problem: SdpProblem, y: np.ndarray, tol: float) -> bool:
    if problem.bounds is None:
        return True
    lo, hi = problem.bounds
    return bool(np.all(y >= lo - tol) and np.all(y <= hi + tol))


def _best_effort(problem, sub, Gl, hl, tol, max_iter, box: float = 1e4):
    """``min t`` such that every (scaled) block is below ``t I``; reports the reached margin."""
    nz = sub.T.shape[1]
    Gs, hs, _ = _conic_data(problem, sub, extra_t=True)
    if not Gs:
        return None
    Gl_t = np.hstack([Gl, np.zeros((Gl.shape[0], 1))]) if Gl.size else np.zeros((0, nz + 1))
    box_rows = np.vstack([np.hstack([np.eye(nz), np.zeros((nz, 1))]),
                          np.hstack([-np.eye(nz), np.zeros((nz, 1))])])
    Gl_t = np.vstack([Gl_t, box_rows])
    hl_t = np.concatenate([hl, np.full(2 * nz, box)])
    c = np.zeros(nz + 1)
    c[-1] = 1.0
    try:
        res = _run_cvxopt(c, Gl_t, hl_t, Gs, hs, tol, max_iter)
    except NumericalFailure:
        return None
    if res is None or res["x"] is None:
        return None
    zt = np.array(res["x"]).ravel()
    y = sub.y0 + sub.T @ zt[:-1]
    reports = verify_certificate(problem.blocks, y, sub.bases)
    return SdpSolution(SdpStatus.INFEASIBLE, y, margin_of(reports), None, reports,
                       "best-effort point of the margin-minimisation problem")


def _infeasible(problem, red, message, tol, max_iter, sub=None, Gl=None, hl=None) -> SdpSolution:
    y = red.y0.copy()
    best = None
    if sub is not None and sub.T.shape[1] > 0:
        best = _best_effort(problem, sub, Gl, hl, tol, max_iter)
    if best is not None:
        best.message = f"{message}; {best.message}"
        best.status = SdpStatus.INFEASIBLE
        return best
    reports = verify_certificate(problem.blocks, y, red.bases)
    return SdpSolution(SdpStatus.INFEASIBLE, y, max(margin_of(reports), 0.0), None, reports, message)
