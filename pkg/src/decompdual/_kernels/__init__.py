"""Hot loops for the block sub-solver.

The compiled module ``_ckernels`` is used when it was built; otherwise the
pure-Python twin in ``_pykernels`` is imported.  ``DECOMPDUAL_PURE=1`` forces
the fallback.  ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("DECOMPDUAL_PURE"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def backend_module(name=None):
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def pivot(T, r, s):
    _impl.pivot(T, r, s)


def prepare_enum(c, A, b, monomials=(), fixed=None, group=(), excluded=()):
    """Pack a pure-binary minimisation for :func:`enum_minimize`.

    c : (n,) costs; A, b : dense ``A x <= b``; monomials : iterable of
    (tuple of indices, coef); fixed : (n,) int array with -1 for free;
    group : coordinates that excluded keys refer to (bit p is ``x[group[p]]``).
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    n = c.shape[0]
    A = np.asarray(A, dtype=np.float64).reshape(-1, n)
    b = np.ascontiguousarray(b, dtype=np.float64)
    m = A.shape[0]
    if fixed is None:
        fixed = -np.ones(n, dtype=np.int8)
    fixed = np.asarray(fixed, dtype=np.int8)
    lo = np.where(fixed == 1, 1, 0).astype(np.int8)
    hi = np.where(fixed == 0, 0, 1).astype(np.int8)

    colptr = np.zeros(n + 1, dtype=np.int64)
    rows, vals = [], []
    for j in range(n):
        nz = np.nonzero(A[:, j])[0]
        rows.extend(nz.tolist())
        vals.extend(A[nz, j].tolist())
        colptr[j + 1] = len(rows)
    colrow = np.array(rows, dtype=np.int64)
    colval = np.array(vals, dtype=np.float64)

    # least activity each row can still gain from columns d..n-1
    contrib = np.where(fixed == 1, A, np.where(fixed == 0, 0.0, np.minimum(A, 0.0)))
    rowrem = np.zeros((m, n + 1))
    if n:
        rowrem[:, :n] = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1]

    cvals = np.where(fixed == 1, c, np.where(fixed == 0, 0.0, np.minimum(c, 0.0)))
    restneg = np.zeros(n + 1)
    if n:
        restneg[:n] = np.cumsum(cvals[::-1])[::-1]

    mons = [(tuple(sorted(set(int(j) for j in S))), float(v)) for S, v in monomials if v != 0.0]
    mons = [(S, v) for S, v in mons if len(S) > 0]
    mons.sort(key=lambda t: (t[0][-1], t[0]))
    Q = len(mons)
    mptr = np.zeros(n + 1, dtype=np.int64)
    mcoef = np.array([v for _, v in mons], dtype=np.float64)
    starts, runs = [], []
    pos = Q
    for S, v in mons:
        starts.append(pos)
        runs.extend(S)
        runs.append(-1)
        pos += len(S) + 1
    mmem = np.array(starts + runs, dtype=np.int64)
    counts = np.bincount([S[-1] for S, _ in mons], minlength=n) if Q else np.zeros(n, dtype=np.int64)
    mptr[1:] = np.cumsum(counts)
    # the monomial bound applies from the first index it could still change
    mon_neg = np.zeros(n + 1)
    for S, v in mons:
        if v < 0:
            mon_neg[: S[-1] + 1] += v
    restneg = restneg + mon_neg

    group = [int(g) for g in group]
    group_pos = -np.ones(n, dtype=np.int64)
    for p, g in enumerate(group):
        group_pos[g] = p
    glast = max(group) if group else -1
    if excluded and group:
        if len(group) > 24:
            raise ValueError("exclusion table limited to 24 coordinates")
        excl = np.zeros(1 << len(group), dtype=np.uint8)
        for key in excluded:
            excl[int(key)] = 1
    else:
        excl = np.zeros(0, dtype=np.uint8)
    return (c, b, colptr, colrow, colval, rowrem, restneg, mptr, mmem, mcoef,
            lo, hi, group_pos, np.int64(glast), excl)


def enum_minimize(packed, tol=1e-9, backend=None):
    mod = backend_module(backend)
    return mod.enum_minimize(*packed, tol)
