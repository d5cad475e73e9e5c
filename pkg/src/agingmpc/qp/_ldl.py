"""Sparse LDL^T factorization of quasi-definite matrices (no pivoting).

Input is the upper triangle of a symmetric matrix in CSC form with every
diagonal entry present. Quasi-definite matrices are strongly factorizable,
so any symmetric ordering yields a stable factorization; the ordering is
chosen outside this module to limit fill.
"""

import numpy as np
from numba import njit

_UNUSED = 0
_USED = 1


@njit(cache=True)
def etree(n, Ap, Ai, work, Lnz, parent):
    """Elimination tree and column counts of L. Returns nnz(L) or -1."""
    for i in range(n):
        work[i] = 0
        Lnz[i] = 0
        parent[i] = -1
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return -1
            while work[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                Lnz[i] += 1
                work[i] = j
                i = parent[i]
    total = 0
    for i in range(n):
        total += Lnz[i]
    return total


@njit(cache=True)
def factor(n, Ap, Ai, Ax, Lp, Li, Lx, D, Dinv, Lnz, parent,
           y_markers, y_idx, elim_buffer, next_space, y_vals):
    """Numeric factorization A = L D L^T. Returns the count of positive pivots, or -1 on a zero pivot."""
    Lp[0] = 0
    for i in range(n):
        Lp[i + 1] = Lp[i] + Lnz[i]
        y_markers[i] = _UNUSED
        y_vals[i] = 0.0
        D[i] = 0.0
        next_space[i] = Lp[i]
    positive = 0
    for k in range(n):
        nnz_y = 0
        for p in range(Ap[k], Ap[k + 1]):
            bidx = Ai[p]
            if bidx == k:
                D[k] = Ax[p]
                continue
            y_vals[bidx] = Ax[p]
            next_idx = bidx
            if y_markers[next_idx] == _UNUSED:
                y_markers[next_idx] = _USED
                elim_buffer[0] = next_idx
                nnz_e = 1
                next_idx = parent[bidx]
                while next_idx != -1 and next_idx < k:
                    if y_markers[next_idx] == _USED:
                        break
                    y_markers[next_idx] = _USED
                    elim_buffer[nnz_e] = next_idx
                    nnz_e += 1
                    next_idx = parent[next_idx]
                while nnz_e > 0:
                    nnz_e -= 1
                    y_idx[nnz_y] = elim_buffer[nnz_e]
                    nnz_y += 1
        for i in range(nnz_y - 1, -1, -1):
            cidx = y_idx[i]
            tmp = next_space[cidx]
            yv = y_vals[cidx]
            for j in range(Lp[cidx], tmp):
                y_vals[Li[j]] -= Lx[j] * yv
            Li[tmp] = k
            Lx[tmp] = yv * Dinv[cidx]
            D[k] -= yv * Lx[tmp]
            next_space[cidx] += 1
            y_vals[cidx] = 0.0
            y_markers[cidx] = _UNUSED
        if D[k] == 0.0:
            return -1
        if D[k] > 0.0:
            positive += 1
        Dinv[k] = 1.0 / D[k]
    return positive


@njit(cache=True)
def solve_inplace(n, Lp, Li, Lx, Dinv, x):
    """Overwrite x with (L D L^T)^{-1} x."""
    for i in range(n):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * xi
    for i in range(n):
        x[i] *= Dinv[i]
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            acc -= Lx[j] * x[Li[j]]
        x[i] = acc


class LDLFactor:
    """Symbolic analysis held once per pattern; numeric refactorization on demand."""

    def __init__(self, n, Ap, Ai):
        self.n = n
        self.Ap = np.ascontiguousarray(Ap, dtype=np.int64)
        self.Ai = np.ascontiguousarray(Ai, dtype=np.int64)
        work = np.empty(n, dtype=np.int64)
        self.Lnz = np.empty(n, dtype=np.int64)
        self.parent = np.empty(n, dtype=np.int64)
        nnz = etree(n, self.Ap, self.Ai, work, self.Lnz, self.parent)
        if nnz < 0:
            raise ValueError("matrix is not upper triangular CSC")
        self.Lp = np.empty(n + 1, dtype=np.int64)
        self.Li = np.empty(max(nnz, 1), dtype=np.int64)
        self.Lx = np.empty(max(nnz, 1))
        self.D = np.empty(n)
        self.Dinv = np.empty(n)
        self._markers = np.empty(n, dtype=np.int64)
        self._yidx = np.empty(n, dtype=np.int64)
        self._elim = np.empty(n, dtype=np.int64)
        self._next = np.empty(n, dtype=np.int64)
        self._yvals = np.empty(n)

    def factor(self, Ax) -> int:
        return factor(self.n, self.Ap, self.Ai, Ax, self.Lp, self.Li, self.Lx,
                      self.D, self.Dinv, self.Lnz, self.parent, self._markers,
                      self._yidx, self._elim, self._next, self._yvals)

    def solve(self, b):
        x = np.array(b, dtype=float, copy=True)
        solve_inplace(self.n, self.Lp, self.Li, self.Lx, self.Dinv, x)
        return x
