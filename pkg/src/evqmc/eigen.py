"""Two smallest eigenpairs of A(y) w = lambda M w.

The first pair comes from shift-free inverse iteration started at the
normalised all-ones vector.  The second pair comes from inverse iteration on
a small block kept M-orthogonal to the first eigenvector, with a
Rayleigh-Ritz step each sweep so that (near-)degenerate second and third
eigenvalues do not stall it.  Every linear solve is Jacobi-preconditioned
conjugate gradients.

All routines work on a batch of operators sharing one sparsity pattern.
Samples in a batch never interact: a sample that has converged is frozen
while the others keep iterating, so a result does not depend on which batch
it was computed in.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._kernels import pcg_rows

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 500
CG_MAX_ITER = 2000


class ConvergenceError(RuntimeError):
    """Raised when an iteration does not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class NearDegenerateWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class EigenPair:
    eigenvalue: float
    eigenvector: np.ndarray
    residual: float
    m_norm: float
    iterations: int = 0
    near_degenerate: bool = False


@dataclass(frozen=True)
class GapReport:
    lambda1: float
    lambda2: float
    gap: float
    rel_gap: float

    @classmethod
    def from_pairs(cls, p1: EigenPair, p2: EigenPair) -> "GapReport":
        l1, l2 = p1.eigenvalue, p2.eigenvalue
        return cls(l1, l2, l2 - l1, (l2 - l1) / l1)


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def _rownorm(a: np.ndarray) -> np.ndarray:
    return np.sqrt(_rowdot(a, a))


class BatchOperator:
    """B symmetric matrices with a common CSR pattern, applied row-wise.

    ``owner[i]`` names the matrix that vector row ``i`` is paired with, so one
    operator can act on several right-hand sides per sample.
    """

    def __init__(self, data: np.ndarray, indices: np.ndarray, indptr: np.ndarray):
        data = np.ascontiguousarray(np.atleast_2d(np.asarray(data, dtype=float)))
        self.data = data
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.batch, nnz = data.shape
        self.n = indptr.size - 1
        self.owner = np.arange(self.batch, dtype=np.int64)
        offs = (np.arange(self.batch) * self.n).astype(np.int64)
        big_idx = (self.indices[None, :] + offs[:, None]).ravel()
        big_ptr = (self.indptr[None, :-1] + (np.arange(self.batch) * nnz)[:, None]).ravel()
        big_ptr = np.append(big_ptr, self.batch * nnz)
        self._big = sp.csr_matrix((data.ravel(), big_idx, big_ptr), shape=(self.batch * self.n,) * 2)
        rows = np.repeat(np.arange(self.n), np.diff(indptr))
        diag_pos = np.flatnonzero(rows == indices)
        if diag_pos.size != self.n:
            raise ValueError("operator pattern lacks a full diagonal")
        if np.any(data[:, diag_pos] <= 0):
            raise ValueError("operator has a nonpositive diagonal entry; it is not SPD")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply to x of shape (B, n), or (B q, n) with q vectors per sample."""
        q = x.shape[0] // self.batch
        if q == 1:
            return (self._big @ x.reshape(-1)).reshape(self.batch, self.n)
        xs = x.reshape(self.batch, q, self.n).transpose(0, 2, 1).reshape(self.batch * self.n, q)
        out = self._big @ xs
        return out.reshape(self.batch, self.n, q).transpose(0, 2, 1).reshape(self.batch * q, self.n)

    def repeat(self, q: int) -> "BatchOperator":
        """The same operator acting on q right-hand sides per sample, sample-major."""
        new = BatchOperator.__new__(BatchOperator)
        new.__dict__.update(self.__dict__)
        new.owner = np.repeat(self.owner, q)
        return new


def _mass_apply(M: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    return np.asarray(M @ x.T).T


def pcg_batch(
    op: BatchOperator,
    rhs: np.ndarray,
    x0: np.ndarray,
    rtol: np.ndarray,
    max_iter: int = CG_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobi-preconditioned CG for each row; stops row-wise at ||r|| <= rtol ||b||.

    Returns the solutions and the iteration count per row.
    """
    rows = rhs.shape[0]
    owner = op.owner if op.owner.size == rows else np.repeat(op.owner, rows // op.owner.size)
    rt = np.ascontiguousarray(np.broadcast_to(np.asarray(rtol, dtype=float), (rows,)))
    x, its, rel = pcg_rows(
        op.data, owner, op.indices, op.indptr,
        np.ascontiguousarray(rhs, dtype=float), np.ascontiguousarray(x0, dtype=float), rt, max_iter,
    )
    bad = (its >= max_iter) & (rel > rt)
    if bad.any():
        raise ConvergenceError("conjugate gradients did not converge", float(rel[bad].max()))
    return x, its


def _m_normalize(w: np.ndarray, mw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nrm = np.sqrt(_rowdot(w, mw))
    sgn = np.where(w.sum(axis=1) < 0, -1.0, 1.0)
    f = (sgn / nrm)[:, None]
    return w * f, mw * f


def _inner_rtol(res: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return np.clip(0.02 * res / np.abs(lam), 1e-14, 1e-2)


@dataclass(frozen=True, eq=False)
class BatchPairs:
    """Eigen-data for a batch; second-pair arrays are None unless requested."""

    lambda1: np.ndarray
    omega1: np.ndarray
    residual1: np.ndarray
    iterations1: np.ndarray
    lambda2: Optional[np.ndarray] = None
    omega2: Optional[np.ndarray] = None
    residual2: Optional[np.ndarray] = None
    iterations2: Optional[np.ndarray] = None


def _first_pair(op: BatchOperator, M: sp.csr_matrix, tol: float, max_iter: int, target: Optional[float] = None):
    """Inverse iteration to residual ``tol``.

    With ``target < tol`` a row keeps iterating towards ``target`` until its
    residual stops halving; only ``tol`` is required for convergence.
    """
    target = tol if target is None else min(target, tol)
    B, n = op.batch, op.n
    w = np.ones((B, n))
    w, mw = _m_normalize(w, _mass_apply(M, w))
    aw = op.matvec(w)
    lam = _rowdot(w, aw)
    res = _rownorm(aw - lam[:, None] * mw) / _rownorm(mw)
    its = np.zeros(B, dtype=np.int64)
    stalled = np.zeros(B, dtype=bool)
    for _ in range(max_iter):
        act = (res > target) & ~stalled
        if not act.any():
            break
        x, _ = pcg_batch(op, mw, w / lam[:, None], _inner_rtol(np.maximum(res, target), lam))
        xn, mxn = _m_normalize(x, _mass_apply(M, x))
        axn = op.matvec(xn)
        lam_n = _rowdot(xn, axn)
        res_n = _rownorm(axn - lam_n[:, None] * mxn) / _rownorm(mxn)
        stalled |= act & (res <= tol) & (res_n > 0.5 * res)
        # a converged row never takes a step that increases its residual
        take = act & ~((res <= tol) & (res_n > res))
        w = np.where(take[:, None], xn, w)
        mw = np.where(take[:, None], mxn, mw)
        lam = np.where(take, lam_n, lam)
        res = np.where(take, res_n, res)
        its += act
    if np.any(res > tol):
        raise ConvergenceError("inverse iteration for the first eigenpair did not converge", float(res.max()))
    return lam, w, res, its


def _start_block(n: int, coords: Optional[np.ndarray]) -> np.ndarray:
    if coords is None:
        t = np.linspace(-0.5, 0.5, n)
        cols = [t, np.ones(n), t * t - np.mean(t * t)]
    else:
        c = coords - 0.5
        cols = [c[:, 0], np.ones(n)] + [c[:, k] for k in range(1, c.shape[1])]
    return np.array(cols)


def _deflate(v: np.ndarray, w1: np.ndarray, mw1: np.ndarray) -> np.ndarray:
    # v: (B, q, n); w1, mw1: (B, n)
    coef = np.einsum("bqn,bn->bq", v, mw1)
    return v - coef[:, :, None] * w1[:, None, :]


def _rayleigh_ritz(op_q, M, v, B, q, n):
    flat = v.reshape(B * q, n)
    av = op_q.matvec(flat).reshape(B, q, n)
    mv = _mass_apply(M, flat).reshape(B, q, n)
    ga = np.einsum("bqn,bpn->bqp", v, av)
    gm = np.einsum("bqn,bpn->bqp", v, mv)
    ga = 0.5 * (ga + ga.transpose(0, 2, 1))
    gm = 0.5 * (gm + gm.transpose(0, 2, 1))
    L = np.linalg.cholesky(gm)
    Linv = np.linalg.inv(L)
    red = Linv @ ga @ Linv.transpose(0, 2, 1)
    theta, u = np.linalg.eigh(red)
    coef = Linv.transpose(0, 2, 1) @ u  # (B, q, q), columns are Ritz coefficients
    vs = np.einsum("bqn,bqk->bkn", v, coef)
    avs = np.einsum("bqn,bqk->bkn", av, coef)
    mvs = np.einsum("bqn,bqk->bkn", mv, coef)
    return theta, vs, avs, mvs


def _second_pair(op, M, w1, mw1, tol, max_iter, coords):
    B, n = op.batch, op.n
    if n < 2:
        raise ValueError("a second eigenpair needs at least 2 degrees of freedom")
    # after deflation only n - 1 directions remain
    v0 = _start_block(n, coords)[: n - 1]
    q = v0.shape[0]
    op_q = op.repeat(q)
    v = _deflate(np.broadcast_to(v0, (B, q, n)).copy(), w1, mw1)
    theta, v, av, mv = _rayleigh_ritz(op_q, M, v, B, q, n)

    def lowest(theta, v, av, mv):
        w, m = v[:, 0], mv[:, 0]
        nrm = np.sqrt(_rowdot(w, m))
        sgn = np.where(w.sum(axis=1) < 0, -1.0, 1.0)
        f = (sgn / nrm)[:, None]
        w, aw, m = w * f, av[:, 0] * f, m * f
        r = np.linalg.norm(aw - theta[:, :1] * m, axis=1) / np.linalg.norm(m, axis=1)
        return w, r

    w2, res = lowest(theta, v, av, mv)
    col_res = np.linalg.norm(av - theta[:, :, None] * mv, axis=2) / np.linalg.norm(mv, axis=2)
    its = np.zeros(B, dtype=np.int64)
    for _ in range(max_iter):
        act = res > tol
        if not act.any():
            break
        rhs = mv.reshape(B * q, n)
        x0 = (v / theta[:, :, None]).reshape(B * q, n)
        rt = _inner_rtol(col_res, theta).reshape(-1)
        x, _ = pcg_batch(op_q, rhs, x0, rt)
        x = _deflate(x.reshape(B, q, n), w1, mw1)
        th_n, v_n, av_n, mv_n = _rayleigh_ritz(op_q, M, x, B, q, n)
        w_n, res_n = lowest(th_n, v_n, av_n, mv_n)
        cr_n = np.linalg.norm(av_n - th_n[:, :, None] * mv_n, axis=2) / np.linalg.norm(mv_n, axis=2)
        a3 = act[:, None, None]
        theta = np.where(act[:, None], th_n, theta)
        v, av, mv = np.where(a3, v_n, v), np.where(a3, av_n, av), np.where(a3, mv_n, mv)
        w2 = np.where(act[:, None], w_n, w2)
        res = np.where(act, res_n, res)
        col_res = np.where(act[:, None], cr_n, col_res)
        its += act
    if np.any(res > tol):
        raise ConvergenceError("deflated iteration for the second eigenpair did not converge", float(res.max()))
    return theta[:, 0], w2, res, its


def solve_batch(
    data: np.ndarray,
    pattern: sp.csr_matrix,
    M: sp.csr_matrix,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    second: bool = False,
    coords: Optional[np.ndarray] = None,
) -> BatchPairs:
    """Eigenpairs for each row of ``data`` (CSR data on the pattern of ``pattern``)."""
    op = BatchOperator(data, pattern.indices, pattern.indptr)
    # the error left in omega_1 puts a floor under the deflated residual of
    # the second pair, so omega_1 is solved more tightly in that case
    lam1, w1, r1, i1 = _first_pair(op, M, tol, max_iter, 0.01 * tol if second else None)
    if not second:
        return BatchPairs(lam1, w1, r1, i1)
    mw1 = _mass_apply(M, w1)
    lam2, w2, r2, i2 = _second_pair(op, M, w1, mw1, tol, max_iter, coords)
    return BatchPairs(lam1, w1, r1, i1, lam2, w2, r2, i2)


def _pairs_from_batch(bp: BatchPairs, M: sp.csr_matrix, k: int, tol: float) -> tuple[EigenPair, EigenPair]:
    w1, w2 = bp.omega1[k], bp.omega2[k]
    l1, l2 = float(bp.lambda1[k]), float(bp.lambda2[k])
    degenerate = (l2 - l1) < 10 * tol * l1
    if degenerate:
        warnings.warn(f"near-degenerate eigenvalues {l1!r}, {l2!r}", NearDegenerateWarning, stacklevel=3)
    p1 = EigenPair(l1, w1, float(bp.residual1[k]), float(w1 @ (M @ w1)), int(bp.iterations1[k]), degenerate)
    p2 = EigenPair(l2, w2, float(bp.residual2[k]), float(w2 @ (M @ w2)), int(bp.iterations2[k]), degenerate)
    return p1, p2


def two_smallest(
    A: sp.spmatrix,
    M: sp.spmatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    coords: Optional[np.ndarray] = None,
) -> tuple[EigenPair, EigenPair]:
    """Two smallest eigenpairs of the pencil (A, M), both M-normalised, sum(w) > 0."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    M = sp.csr_matrix(M)
    bp = solve_batch(A.data[None, :], A, M, tol=tol, max_iter=max_iter, second=True, coords=coords)
    return _pairs_from_batch(bp, M, 0, tol)


def assemble_operator(space, exp, y) -> sp.csr_matrix:
    """A(y) = A0 + sum_j y_j A_j from the per-term matrices of ``space``."""
    from .coefficients import as_parameter

    y = as_parameter(y)
    if y.size > space.n_terms or (exp is not None and y.size > exp.s_max):
        raise ValueError(f"parameter has {y.size} components but only {space.n_terms} terms are assembled")
    return space.operator(y)


def solve_space(space, Y, *, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, second=False) -> BatchPairs:
    """Batch eigen-solve of A(y) for the rows of Y (shape (B, s))."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return solve_batch(
        space.operator_data(Y), space.stiffness0, space.mass,
        tol=tol, max_iter=max_iter, second=second, coords=space.mesh.interior_coords,
    )


def pairs_at(space, y, *, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> tuple[EigenPair, EigenPair]:
    """Two smallest eigenpairs of A(y) on ``space``."""
    bp = solve_space(space, np.asarray(y, dtype=float)[None, :], tol=tol, max_iter=max_iter, second=True)
    return _pairs_from_batch(bp, space.mass, 0, tol)


def eigenvalue_bounds_check(
    pair1: EigenPair,
    pair2: EigenPair,
    report,
    chi_h: tuple[float, float],
    rtol: float = 10 * DEFAULT_TOL,
) -> bool:
    """Discrete enclosure (alpha_min - Lambda0) chi_k^h <= lambda_k <= (alpha_max + Lambda0) chi_k^h.

    Both ends are widened by ``rtol`` relative, since the eigenvalues and
    chi_k^h come from an iterative solver; with Lambda0 = 0 the enclosure is
    an equality.
    """
    lo = report.alpha_min - report.Lambda0
    hi = report.alpha_max + report.Lambda0
    ok = True
    for lam, chi in ((pair1.eigenvalue, chi_h[0]), (pair2.eigenvalue, chi_h[1])):
        ok &= lo * chi * (1 - rtol) <= lam <= hi * chi * (1 + rtol)
    return bool(ok)


def eigenfunction_functional(pair: EigenPair, weights: np.ndarray, M: sp.spmatrix) -> float:
    """G(omega_1) = g^T M omega_1 for the grid function g."""
    g = np.asarray(weights, dtype=float)
    if g.shape != pair.eigenvector.shape:
        raise ValueError(f"functional has length {g.size}, eigenvector has length {pair.eigenvector.size}")
    return float(g @ (M @ pair.eigenvector))
