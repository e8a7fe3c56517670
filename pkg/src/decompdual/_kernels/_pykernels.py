"""Pure-Python reference kernels.

Both backends expose the same two entry points:

``enum_minimize``
    depth-first enumeration over binary vectors in index order (0 before 1)
    with a cheap bound and row-activity pruning.  The first leaf that strictly
    improves the incumbent is kept, so ties resolve to the lexicographically
    smallest vector.
``pivot``
    in-place Gauss-Jordan pivot on a dense tableau.

The arguments are prepared by :func:`decompdual._kernels.prepare_enum`.
"""
import numpy as np


def pivot(T, r, s):
    T[r, :] /= T[r, s]
    col = T[:, s].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r, :])


def enum_minimize(c, b, colptr, colrow, colval, rowrem, restneg,
                  mptr, mmem, mcoef, lo, hi, group_pos, glast, excl, tol):
    """Returns (status, value, x, nodes); status 0 optimal, 1 infeasible."""
    n = c.shape[0]
    m = b.shape[0]
    act = [0.0] * m
    bl = b.tolist()
    for i in range(m):
        if rowrem[i, 0] > bl[i] + tol:
            return 1, np.inf, np.zeros(n, dtype=np.int8), 0
    if n == 0:
        return 0, 0.0, np.zeros(0, dtype=np.int8), 1

    cl = c.tolist()
    rr = rowrem.tolist()
    rn = restneg.tolist()
    cp = colptr.tolist()
    cr = colrow.tolist()
    cv = colval.tolist()
    mp = mptr.tolist()
    mm = mmem.tolist()
    mc = mcoef.tolist()
    gp = group_pos.tolist()
    lol = lo.tolist()
    hil = hi.tolist()
    has_excl = excl.shape[0] > 0
    ex = excl

    x = [0] * n
    cost = [0.0] * (n + 1)
    choice = [0] * n
    best = np.inf
    bestx = None
    nodes = 0

    d = 0
    choice[0] = lol[0]
    while d >= 0:
        if choice[d] > hil[d]:
            d -= 1
            if d >= 0:
                if x[d] == 1:
                    for q in range(cp[d], cp[d + 1]):
                        act[cr[q]] -= cv[q]
                x[d] = 0
                choice[d] += 1
            continue
        val = choice[d]
        nodes += 1
        x[d] = val
        delta = 0.0
        ok = True
        if val == 1:
            delta = cl[d]
            for q in range(mp[d], mp[d + 1]):
                # members are stored as a -1 terminated run starting at mm[q]
                j = mm[q]
                allone = True
                while mm[j] >= 0:
                    if x[mm[j]] != 1:
                        allone = False
                        break
                    j += 1
                if allone:
                    delta += mc[q]
            for q in range(cp[d], cp[d + 1]):
                act[cr[q]] += cv[q]
        nc = cost[d] + delta
        cost[d + 1] = nc
        for q in range(cp[d], cp[d + 1]):
            i = cr[q]
            if act[i] + rr[i][d + 1] > bl[i] + tol:
                ok = False
                break
        if ok and d == glast and has_excl:
            key = 0
            for j in range(glast + 1):
                if gp[j] >= 0 and x[j] == 1:
                    key |= 1 << gp[j]
            if ex[key]:
                ok = False
        if ok and nc + rn[d + 1] >= best - tol:
            ok = False
        if ok and d == n - 1:
            best = nc
            bestx = list(x)
            ok = False
        if ok:
            d += 1
            choice[d] = lol[d]
            continue
        if x[d] == 1:
            for q in range(cp[d], cp[d + 1]):
                act[cr[q]] -= cv[q]
        x[d] = 0
        choice[d] += 1

    if bestx is None:
        return 1, np.inf, np.zeros(n, dtype=np.int8), nodes
    return 0, best, np.array(bestx, dtype=np.int8), nodes
