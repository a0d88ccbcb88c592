"""Compiled inner loops for the eigen solver."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def pcg_rows(data, owner, indices, indptr, rhs, x0, rtol, max_iter):
    """Jacobi-PCG for each row of ``rhs`` against the matrix ``data[owner[row]]``.

    Rows are solved one after another to ``||r|| <= rtol[row] ||b||``.
    Returns the solutions, the iteration counts and the final relative
    residuals; a count of ``max_iter`` with a residual above target signals
    failure to the caller.
    """
    nrow, n = rhs.shape
    x = x0.copy()
    its = np.zeros(nrow, np.int64)
    rel = np.zeros(nrow)
    r = np.empty(n)
    z = np.empty(n)
    p = np.empty(n)
    ap = np.empty(n)
    dinv = np.empty(n)
    for b in range(nrow):
        d = data[owner[b]]
        for i in range(n):
            for k in range(indptr[i], indptr[i + 1]):
                if indices[k] == i:
                    dinv[i] = 1.0 / d[k]
        bn = 0.0
        for i in range(n):
            s = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                s += d[k] * x[b, indices[k]]
            r[i] = rhs[b, i] - s
            bn += rhs[b, i] * rhs[b, i]
        tgt = rtol[b] * rtol[b] * bn
        rz = 0.0
        rr = 0.0
        for i in range(n):
            z[i] = r[i] * dinv[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            rr += r[i] * r[i]
        it = 0
        while rr > tgt and it < max_iter:
            pap = 0.0
            for i in range(n):
                s = 0.0
                for k in range(indptr[i], indptr[i + 1]):
                    s += d[k] * p[indices[k]]
                ap[i] = s
                pap += p[i] * s
            alpha = rz / pap
            rr = 0.0
            rzn = 0.0
            for i in range(n):
                x[b, i] += alpha * p[i]
                r[i] -= alpha * ap[i]
                rr += r[i] * r[i]
                z[i] = r[i] * dinv[i]
                rzn += r[i] * z[i]
            beta = rzn / rz
            rz = rzn
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            it += 1
        its[b] = it
        rel[b] = np.sqrt(rr / bn) if bn > 0 else 0.0
    return x, its, rel
