# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``.  Same arguments, same results."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def pivot(double[:, ::1] T, Py_ssize_t r, Py_ssize_t s):
    cdef Py_ssize_t i, j, nr = T.shape[0], nc = T.shape[1]
    cdef double piv = T[r, s], f
    with nogil:
        for j in range(nc):
            T[r, j] /= piv
        for i in range(nr):
            if i == r:
                continue
            f = T[i, s]
            if f != 0.0:
                for j in range(nc):
                    T[i, j] -= f * T[r, j]


def enum_minimize(double[::1] c, double[::1] b,
                  long[::1] colptr, long[::1] colrow, double[::1] colval,
                  double[:, ::1] rowrem, double[::1] restneg,
                  long[::1] mptr, long[::1] mmem, double[::1] mcoef,
                  signed char[::1] lo, signed char[::1] hi,
                  long[::1] group_pos, long glast,
                  unsigned char[::1] excl, double tol):
    cdef Py_ssize_t n = c.shape[0], m = b.shape[0]
    cdef Py_ssize_t i, j, q, d
    cdef long key
    cdef int val, ok, allone
    cdef double delta, nc, best = INFINITY
    cdef long nodes = 0
    cdef bint has_excl = excl.shape[0] > 0
    cdef bint found = False

    for i in range(m):
        if rowrem[i, 0] > b[i] + tol:
            return 1, np.inf, np.zeros(n, dtype=np.int8), 0
    if n == 0:
        return 0, 0.0, np.zeros(0, dtype=np.int8), 1

    act_arr = np.zeros(m, dtype=np.float64)
    x_arr = np.zeros(n, dtype=np.int8)
    bx_arr = np.zeros(n, dtype=np.int8)
    cost_arr = np.zeros(n + 1, dtype=np.float64)
    choice_arr = np.zeros(n, dtype=np.int8)
    cdef double[::1] act = act_arr
    cdef signed char[::1] x = x_arr
    cdef signed char[::1] bx = bx_arr
    cdef double[::1] cost = cost_arr
    cdef signed char[::1] choice = choice_arr

    with nogil:
        d = 0
        choice[0] = lo[0]
        while d >= 0:
            if choice[d] > hi[d]:
                d -= 1
                if d >= 0:
                    if x[d] == 1:
                        for q in range(colptr[d], colptr[d + 1]):
                            act[colrow[q]] -= colval[q]
                    x[d] = 0
                    choice[d] += 1
                continue
            val = choice[d]
            nodes += 1
            x[d] = val
            delta = 0.0
            ok = 1
            if val == 1:
                delta = c[d]
                for q in range(mptr[d], mptr[d + 1]):
                    j = mmem[q]
                    allone = 1
                    while mmem[j] >= 0:
                        if x[mmem[j]] != 1:
                            allone = 0
                            break
                        j += 1
                    if allone:
                        delta += mcoef[q]
                for q in range(colptr[d], colptr[d + 1]):
                    act[colrow[q]] += colval[q]
            nc = cost[d] + delta
            cost[d + 1] = nc
            for q in range(colptr[d], colptr[d + 1]):
                i = colrow[q]
                if act[i] + rowrem[i, d + 1] > b[i] + tol:
                    ok = 0
                    break
            if ok and d == glast and has_excl:
                key = 0
                for j in range(glast + 1):
                    if group_pos[j] >= 0 and x[j] == 1:
                        key |= (<long>1) << group_pos[j]
                if excl[key]:
                    ok = 0
            if ok and nc + restneg[d + 1] >= best - tol:
                ok = 0
            if ok and d == n - 1:
                best = nc
                for j in range(n):
                    bx[j] = x[j]
                found = True
                ok = 0
            if ok:
                d += 1
                choice[d] = lo[d]
                continue
            if x[d] == 1:
                for q in range(colptr[d], colptr[d + 1]):
                    act[colrow[q]] -= colval[q]
            x[d] = 0
            choice[d] += 1

    if not found:
        return 1, np.inf, np.zeros(n, dtype=np.int8), nodes
    return 0, best, bx_arr, nodes
