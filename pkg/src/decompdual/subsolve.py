"""Exact block sub-problem solvers.

* ``solve_lp`` - dense bounded-variable primal simplex (two phases).
* ``solve_block_mip`` - binary branch and bound over ``solve_lp`` with exact
  monomial linearisation and no-good cuts; pure-binary blocks go through an
  enumeration kernel instead (same optimum, same tie-breaking).
* ``solve_vl_subproblem`` - blocks whose objective carries one penalty per
  full assignment of the matched coordinates, solved in the original space by
  splitting into "not one of the penalised assignments" and "exactly one".

Ties between equal-value optima always resolve to the lexicographically
smallest binary vector.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import Block

LP_TOL = 1e-9
INT_TOL = 1e-7
BLAND_AFTER = 50

_trace_sink = None


def set_trace_sink(sink):
    """Route B&B node records of every block solve into ``sink`` (a list), or stop with None."""
    global _trace_sink
    _trace_sink = sink


# ------------------------------------------------------------------ keys

def vertex_key(bits) -> int | str:
    """Bitmask of a 0/1 sequence, bit p = bits[p]; long sequences become strings."""
    bits = [int(round(v)) for v in bits]
    if len(bits) > 63:
        return "".join(str(v) for v in bits)
    key = 0
    for p, v in enumerate(bits):
        if v:
            key |= 1 << p
    return key


def key_bits(key, length: int) -> np.ndarray:
    if isinstance(key, str):
        return np.array([int(ch) for ch in key], dtype=np.int8)
    return np.array([(key >> p) & 1 for p in range(length)], dtype=np.int8)


def no_good_cut(coords, key, nBin: int):
    """``sum_{v_j=1}(1-x_j) + sum_{v_j=0} x_j >= 1`` written as a <= row over x."""
    bits = key_bits(key, len(coords))
    row = np.zeros(nBin)
    for j, v in zip(coords, bits):
        row[j] = 1.0 if v else -1.0
    return row, float(bits.sum() - 1)


# ------------------------------------------------------------------ LP

@dataclass
class LPProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def make(cls, c, A=None, b=None, lo=None, hi=None):
        c = np.asarray(c, dtype=float)
        n = c.shape[0]
        A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
        lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
        hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
        return cls(c, A, b, lo, hi)


@dataclass
class LPSolution:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    value: float = np.nan
    iterations: int = 0


class SimplexStall(RuntimeError):
    pass


def _simplex_core(T, xB, basis, at_upper, ub, cost, max_iter):
    """Bounded primal simplex on tableau T = B^-1 [A I -E]; minimises cost."""
    m, N = T.shape
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    degenerate = 0
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise SimplexStall(f"simplex exceeded {max_iter} pivots")
        cb = cost[basis]
        red = cost - cb @ T
        bland = degenerate >= BLAND_AFTER
        cand_up = (~is_basic) & (~at_upper) & (red < -LP_TOL) & (ub > 0)
        cand_dn = (~is_basic) & at_upper & (red > LP_TOL)
        cand = np.nonzero(cand_up | cand_dn)[0]
        if cand.size == 0:
            return "optimal", it
        if bland:
            j = int(cand[0])
        else:
            j = int(cand[np.argmax(np.abs(red[cand]))])
        direction = 1.0 if not at_upper[j] else -1.0
        alpha = direction * T[:, j]
        # ratio test
        theta = ub[j]
        r = -1
        best_piv = 0.0
        for i in range(m):
            a = alpha[i]
            if a > LP_TOL:
                lim = xB[i] / a
            elif a < -LP_TOL and np.isfinite(ub[basis[i]]):
                lim = (ub[basis[i]] - xB[i]) / (-a)
            else:
                continue
            lim = max(lim, 0.0)
            if lim < theta - 1e-12:
                theta, r, best_piv = lim, i, abs(a)
            elif r >= 0 and abs(lim - theta) <= 1e-12:
                if bland:
                    if basis[i] < basis[r]:
                        r, best_piv = i, abs(a)
                elif abs(a) > best_piv:
                    r, best_piv = i, abs(a)
        if not np.isfinite(theta):
            return "unbounded", it
        degenerate = degenerate + 1 if theta <= LP_TOL else 0
        xB -= theta * alpha
        if r < 0:
            at_upper[j] = not at_upper[j]
            continue
        leaving = basis[r]
        at_upper[leaving] = alpha[r] < 0
        xB[r] = theta if direction > 0 else ub[j] - theta
        _kernels.pivot(T, r, j)
        basis[r] = j
        is_basic[leaving] = False
        is_basic[j] = True
        at_upper[j] = False


def solve_lp(p: LPProblem, max_iter: int | None = None) -> LPSolution:
    """min c.x s.t. A x <= b, lo <= x <= hi (bounds may be infinite)."""
    c, A, b, lo, hi = p.c, p.A, p.b, p.lo, p.hi
    n = c.shape[0]
    m = A.shape[0]
    if np.any(lo > hi + 1e-12):
        return LPSolution("infeasible")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("LP data must be finite")

    # x = offset + sum_k scale_k * z_k with z >= 0
    cols, scales, offsets, zub = [], [], np.zeros(n), []
    owner = []
    for j in range(n):
        if np.isfinite(lo[j]):
            offsets[j] = lo[j]
            cols.append(j); scales.append(1.0); zub.append(hi[j] - lo[j]); owner.append(j)
        elif np.isfinite(hi[j]):
            offsets[j] = hi[j]
            cols.append(j); scales.append(-1.0); zub.append(np.inf); owner.append(j)
        else:
            cols.append(j); scales.append(1.0); zub.append(np.inf); owner.append(j)
            cols.append(j); scales.append(-1.0); zub.append(np.inf); owner.append(j)
    nz = len(cols)
    scales = np.array(scales)
    Az = A[:, cols] * scales if m else np.zeros((0, nz))
    cz = c[cols] * scales
    rhs = b - A @ offsets if m else np.zeros(0)
    zub = np.array(zub, dtype=float)

    neg = rhs < 0
    art_rows = np.nonzero(neg)[0]
    na = art_rows.size
    N = nz + m + na
    T = np.zeros((m, N))
    T[:, :nz] = Az
    T[:, nz:nz + m] = np.eye(m)
    for k, i in enumerate(art_rows):
        T[i, nz + m + k] = -1.0
    basis = np.empty(m, dtype=np.int64)
    xB = rhs.copy()
    for i in range(m):
        basis[i] = nz + i
    for k, i in enumerate(art_rows):
        basis[i] = nz + m + k
        T[i, :] *= -1.0
        xB[i] = -rhs[i]
    ub = np.concatenate([zub, np.full(m, np.inf), np.full(na, np.inf)])
    at_upper = np.zeros(N, dtype=bool)
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000
    T = np.ascontiguousarray(T)
    iters = 0
    if na:
        cost1 = np.zeros(N)
        cost1[nz + m:] = 1.0
        _, it1 = _simplex_core(T, xB, basis, at_upper, ub, cost1, max_iter)
        iters += it1
        infeas = float(np.sum(xB[basis >= nz + m]))
        if infeas > 1e-7 * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            return LPSolution("infeasible", iterations=iters)
        ub[nz + m:] = 0.0
        at_upper[nz + m:] = False
    cost2 = np.zeros(N)
    cost2[:nz] = cz
    status, it2 = _simplex_core(T, xB, basis, at_upper, ub, cost2, max_iter)
    iters += it2
    if status == "unbounded":
        return LPSolution("unbounded", iterations=iters)

    # recompute the basic values from the original columns for accuracy
    full = np.zeros((m, N))
    full[:, :nz] = Az
    full[:, nz:nz + m] = np.eye(m)
    for k, i in enumerate(art_rows):
        full[i, nz + m + k] = -1.0
    z = np.zeros(N)
    z[at_upper] = ub[at_upper]
    if m:
        nonb = np.ones(N, dtype=bool)
        nonb[basis] = False
        r = rhs - full[:, nonb] @ z[nonb]
        try:
            z[basis] = np.linalg.solve(full[:, basis], r)
        except np.linalg.LinAlgError:
            z[basis] = xB
    x = offsets.copy()
    for k in range(nz):
        x[owner[k]] += scales[k] * z[k]
    x = np.clip(x, lo, hi)
    return LPSolution("optimal", x, float(c @ x), iters)


# ------------------------------------------------------------------ queries

@dataclass
class SubproblemQuery:
    blockId: int
    xCost: np.ndarray
    yCost: np.ndarray
    monomialCost: dict = field(default_factory=dict)   # tuple(local idx) -> coef
    vertexPenalty: dict = field(default_factory=dict)  # vertexKey -> coef
    excluded: frozenset = frozenset()
    fixedVertex: object = None
    coords: tuple = ()        # local coordinates the vertex keys refer to
    fixed: dict = field(default_factory=dict)  # local idx -> 0/1

    def __post_init__(self):
        if self.fixedVertex is not None and self.fixedVertex in self.excluded:
            raise ValueError("fixed vertex is also excluded")


@dataclass
class SubproblemResult:
    status: str  # optimal | infeasible
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    value: float = np.inf
    nodes: int = 0


def default_query(blk: Block, **kw) -> SubproblemQuery:
    return SubproblemQuery(blk.id, blk.cvec.copy(), blk.dvec.copy(), **kw)


def _fixed_vector(blk: Block, q: SubproblemQuery) -> np.ndarray:
    fixed = -np.ones(blk.nBin, dtype=np.int8)
    for j, v in q.fixed.items():
        fixed[j] = int(v)
    if q.fixedVertex is not None:
        for j, v in zip(q.coords, key_bits(q.fixedVertex, len(q.coords))):
            if fixed[j] >= 0 and fixed[j] != v:
                return None
            fixed[j] = v
    return fixed


def query_value(blk: Block, q: SubproblemQuery, x, y) -> float:
    x = np.asarray(x, dtype=float)
    v = float(q.xCost @ x) if blk.nBin else 0.0
    if blk.nCont:
        v += float(q.yCost @ np.asarray(y, dtype=float))
    for S, coef in q.monomialCost.items():
        if all(x[j] > 0.5 for j in S):
            v += coef
    if q.vertexPenalty:
        key = vertex_key(x[list(q.coords)])
        v += q.vertexPenalty.get(key, 0.0)
    return v


@dataclass
class MonomialLinearization:
    subsets: list
    rows: np.ndarray   # over [x, w]
    rhs: np.ndarray


def linearize_monomials(blk: Block, monomials) -> MonomialLinearization:
    """w_S <= x_j (j in S) and w_S >= sum_{j in S} x_j - |S| + 1, w in [0,1]."""
    subsets = [tuple(S) for S in monomials]
    K = len(subsets)
    rows, rhs = [], []
    for k, S in enumerate(subsets):
        for j in S:
            if not 0 <= j < blk.nBin:
                raise ValueError(f"monomial member {j} is not a binary of block {blk.id}")
        for j in S:
            r = np.zeros(blk.nBin + K)
            r[blk.nBin + k] = 1.0
            r[j] = -1.0
            rows.append(r)
            rhs.append(0.0)
        r = np.zeros(blk.nBin + K)
        r[list(S)] = 1.0
        r[blk.nBin + k] = -1.0
        rows.append(r)
        rhs.append(len(S) - 1.0)
    R = np.array(rows).reshape(-1, blk.nBin + K)
    return MonomialLinearization(subsets, R, np.array(rhs, dtype=float))


# ------------------------------------------------------------------ MIP

def _use_enum(blk: Block, q: SubproblemQuery) -> bool:
    return blk.nCont == 0 and blk.nBin <= 30 and len(q.coords) <= 24


def _solve_enum(blk, q, fixed, backend=None):
    packed = _kernels.prepare_enum(q.xCost, blk.Ax, blk.b, q.monomialCost.items(), fixed,
                                   q.coords, q.excluded)
    status, value, x, nodes = _kernels.enum_minimize(packed, 1e-9, backend)
    if status != 0:
        return SubproblemResult("infeasible", nodes=int(nodes))
    x = np.asarray(x, dtype=np.int8)
    return SubproblemResult("optimal", x, np.zeros(0), query_value(blk, q, x, None), int(nodes))


class _MipModel:
    """LP relaxation data of a query: columns [x, w, y]."""

    def __init__(self, blk: Block, q: SubproblemQuery):
        self.blk = blk
        n, p = blk.nBin, blk.nCont
        lin = linearize_monomials(blk, list(q.monomialCost.keys()))
        K = len(lin.subsets)
        self.n, self.K, self.p = n, K, p
        N = n + K + p
        rows, rhs = [], []
        if blk.rows:
            rows.append(np.hstack([blk.Ax, np.zeros((len(blk.rows), K)), blk.Ay]))
            rhs.append(blk.b)
        if K:
            rows.append(np.hstack([lin.rows, np.zeros((lin.rows.shape[0], p))]))
            rhs.append(lin.rhs)
        for key in sorted(q.excluded, key=str):
            r, h = no_good_cut(q.coords, key, n)
            rows.append(np.concatenate([r, np.zeros(K + p)])[None, :])
            rhs.append(np.array([h]))
        self.A = np.vstack(rows) if rows else np.zeros((0, N))
        self.b = np.concatenate(rhs) if rhs else np.zeros(0)
        self.c = np.concatenate([q.xCost, [q.monomialCost[S] for S in lin.subsets], q.yCost])
        self.lo = np.zeros(N)
        self.hi = np.concatenate([np.ones(n + K), np.full(p, np.inf)])

    def solve(self, xlo, xhi, cap=None):
        lo = self.lo.copy()
        hi = self.hi.copy()
        lo[: self.n] = xlo
        hi[: self.n] = xhi
        A, b = self.A, self.b
        if cap is not None:
            A = np.vstack([A, self.c[None, :]])
            b = np.concatenate([b, [cap]])
        return solve_lp(LPProblem(self.c, A, b, lo, hi))


def _solve_bnb(blk, q, fixed, trace=None):
    model = _MipModel(blk, q)
    n = blk.nBin
    base_lo = np.where(fixed == 1, 1.0, 0.0)
    base_hi = np.where(fixed == 0, 0.0, 1.0)
    best, best_sol = np.inf, None
    stack = [(base_lo, base_hi, 0)]
    nodes = 0
    while stack:
        lo, hi, depth = stack.pop()
        nodes += 1
        sol = model.solve(lo, hi)
        if trace is not None:
            trace.append({"node": nodes, "depth": depth, "status": sol.status,
                          "bound": None if sol.status != "optimal" else sol.value})
        if sol.status == "infeasible":
            continue
        if sol.status == "unbounded":
            raise ValueError(f"block {blk.id} sub-problem is unbounded")
        if sol.value >= best - 1e-9:
            continue
        xs = sol.x[:n]
        frac = np.abs(xs - np.round(xs))
        if n == 0 or frac.max() <= INT_TOL:
            best, best_sol = sol.value, sol
            continue
        j = int(np.argmin(np.where(frac > INT_TOL, np.abs(xs - 0.5), np.inf)))
        up_lo = lo.copy(); up_lo[j] = 1.0
        dn_hi = hi.copy(); dn_hi[j] = 0.0
        stack.append((up_lo, hi, depth + 1))
        stack.append((lo, dn_hi, depth + 1))
    if best_sol is None:
        return SubproblemResult("infeasible", nodes=nodes)

    # lexicographic canonicalisation among optima: index-order DFS, 0 first
    cap = best + 1e-9 * max(1.0, abs(best))
    free = [j for j in range(n) if fixed[j] < 0]
    lex_stack = [(base_lo, base_hi, 0)]
    found = None
    while lex_stack:
        lo, hi, d = lex_stack.pop()
        nodes += 1
        sol = model.solve(lo, hi, cap)
        if sol.status != "optimal":
            continue
        if d == len(free):
            found = sol
            break
        j = free[d]
        one_lo = lo.copy(); one_lo[j] = 1.0
        zero_hi = hi.copy(); zero_hi[j] = 0.0
        lex_stack.append((one_lo, hi, d + 1))
        lex_stack.append((lo, zero_hi, d + 1))
    if found is None:
        found = best_sol
    x = np.round(found.x[:n]).astype(np.int8)
    y = np.maximum(found.x[n + model.K:], 0.0)
    return SubproblemResult("optimal", x, y, query_value(blk, q, x, y), nodes)


def solve_block_mip(blk: Block, q: SubproblemQuery, method: str = "auto", trace=None,
                    backend=None) -> SubproblemResult:
    """Exact optimum of the linear + monomial objective over the block (no vertex penalties)."""
    if q.vertexPenalty:
        raise ValueError("vertex penalties go through solve_vl_subproblem")
    fixed = _fixed_vector(blk, q)
    if fixed is None:
        return SubproblemResult("infeasible")
    for S in q.monomialCost:
        for j in S:
            if not 0 <= j < blk.nBin:
                raise ValueError(f"monomial member {j} is not a binary of block {blk.id}")
    if method == "auto":
        method = "enum" if _use_enum(blk, q) else "bnb"
    sink = _trace_sink
    if method == "enum":
        if blk.nCont:
            raise ValueError("enumeration kernel needs a pure-binary block")
        res = _solve_enum(blk, q, fixed, backend)
        if sink is not None:
            sink.append({"block": blk.id, "method": "enum", "nodes": res.nodes,
                         "status": res.status, "value": res.value})
        return res
    if method == "bnb":
        if trace is None and sink is not None:
            rows = []
            res = _solve_bnb(blk, q, fixed, rows)
            sink.extend({"block": blk.id, "method": "bnb", **r} for r in rows)
            return res
        return _solve_bnb(blk, q, fixed, trace)
    raise ValueError(f"unknown method {method!r}")


# ------------------------------------------------------------------ V sub-problem

class CompletionCache:
    """Best completion of a block once its matched coordinates are fixed.

    Entries do not depend on the multipliers, only on the block, the
    coordinate tuple, the fixed assignment and the costs of the unmatched
    variables, which are all part of the key.  Inserts are idempotent.
    """

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def clear(self):
        with self._lock:
            self._data.clear()
            self.hits = self.misses = 0

    def __len__(self):
        return len(self._data)

    def get(self, blk, q, v, method="auto"):
        rest = [j for j in range(blk.nBin) if j not in set(q.coords)]
        key = (blk.fingerprint, q.coords, v, tuple(q.xCost[rest].tolist()),
               tuple(q.yCost.tolist()), tuple(sorted(q.fixed.items())))
        hit = self._data.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        sub = SubproblemQuery(blk.id, q.xCost.copy(), q.yCost, coords=q.coords,
                              fixedVertex=v, fixed=dict(q.fixed))
        sub.xCost[list(q.coords)] = 0.0
        res = solve_block_mip(blk, sub, method)
        entry = (res.status, res.x, res.y, res.value)
        with self._lock:
            self._data.setdefault(key, entry)
        return entry


DEFAULT_CACHE = CompletionCache()


def solve_vl_subproblem(blk: Block, q: SubproblemQuery, cache: CompletionCache | None = None,
                        method: str = "auto") -> SubproblemResult:
    """Vertex-penalised block problem in the original space.

    Branch (a) solves the block with every penalised assignment cut off; branch
    (b) tries each penalised assignment with its cached completion.  A
    penalised assignment replaces the incumbent only when strictly better.
    """
    if cache is None:
        cache = DEFAULT_CACHE
    V = sorted((k for k, v in q.vertexPenalty.items() if v != 0.0), key=lambda k: (str(type(k)), k))
    base = SubproblemQuery(blk.id, q.xCost, q.yCost, dict(q.monomialCost), {},
                           frozenset(q.excluded) | frozenset(V), None, q.coords, dict(q.fixed))
    if q.monomialCost:
        raise ValueError("monomial terms are not combined with vertex penalties")
    res = solve_block_mip(blk, base, method)
    best_val = res.value if res.status == "optimal" else np.inf
    best_x, best_y = res.x, res.y
    nodes = res.nodes
    cx = q.xCost[list(q.coords)]
    for v in V:
        if v in q.excluded:
            continue
        if q.fixedVertex is not None and v != q.fixedVertex:
            continue
        status, x, y, rest_val = cache.get(blk, q, v, method)
        if status != "optimal":
            continue
        bits = key_bits(v, len(q.coords)).astype(float)
        p = float(cx @ bits) + rest_val + q.vertexPenalty[v]
        if p < best_val - 1e-12:
            best_val, best_x, best_y = p, x.copy(), y
    if not np.isfinite(best_val):
        return SubproblemResult("infeasible", nodes=nodes)
    return SubproblemResult("optimal", np.asarray(best_x, dtype=np.int8), best_y, best_val, nodes)


# ------------------------------------------------------------------ helpers

def enumerate_block(blk: Block, coords=()):
    """Yield (x, y, value) for every binary point with a feasible completion (brute force)."""
    for bits in itertools.product((0, 1), repeat=blk.nBin):
        x = np.array(bits, dtype=float)
        if blk.nCont == 0:
            if blk.is_feasible(x):
                yield x.astype(np.int8), np.zeros(0), blk.objective(x)
            continue
        rhs = blk.b - blk.Ax @ x
        sol = solve_lp(LPProblem.make(blk.dvec, blk.Ay, rhs))
        if sol.status == "optimal":
            yield x.astype(np.int8), sol.x, float(blk.cvec @ x) + sol.value


def block_objective_range(blk: Block):
    lo, hi = None, None
    for bits in itertools.product((0, 1), repeat=blk.nBin):
        x = np.array(bits, dtype=float)
        base = float(blk.cvec @ x) if blk.nBin else 0.0
        if blk.nCont == 0:
            if blk.is_feasible(x):
                lo = base if lo is None else min(lo, base)
                hi = base if hi is None else max(hi, base)
            continue
        rhs = blk.b - blk.Ax @ x
        smin = solve_lp(LPProblem.make(blk.dvec, blk.Ay, rhs))
        if smin.status == "infeasible":
            continue
        smax = solve_lp(LPProblem.make(-blk.dvec, blk.Ay, rhs))
        vmin = -np.inf if smin.status == "unbounded" else base + smin.value
        vmax = np.inf if smax.status == "unbounded" else base - smax.value
        lo = vmin if lo is None else min(lo, vmin)
        hi = vmax if hi is None else max(hi, vmax)
    return lo, hi
