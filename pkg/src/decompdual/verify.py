"""Ground-truth oracles and bound checkers.

Nothing here calls the sub-solvers in :mod:`decompdual.subsolve`: block points
are enumerated with numpy, continuous completions and the hull LPs go through
scipy's HiGHS.  That keeps the oracles independent of the code they check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .model import Instance, MonomialFamily, build_monomial_family
from .structure import TreeDecomposition, instance_layout
from .subsolve import LPProblem, solve_lp

ENUM_CHUNK = 1 << 16
MAX_GLOBAL_GIDS = 24
MAX_GOOD_VARS = 16


class OracleBudgetError(RuntimeError):
    pass


# ------------------------------------------------------------------ block tables

def _completion(blk, x):
    """min d.y s.t. Ay y <= b - Ax x, y >= 0 via HiGHS; (value, y) or (inf, None)."""
    rhs = blk.b - blk.Ax @ x
    if blk.nCont == 0:
        return (0.0, np.zeros(0)) if np.all(rhs >= -1e-9) else (math.inf, None)
    res = linprog(blk.dvec, A_ub=blk.Ay, b_ub=rhs, bounds=[(0, None)] * blk.nCont,
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return math.inf, None
    if res.status == 3:
        raise OracleBudgetError(f"block {blk.id}: unbounded continuous completion")
    if res.status != 0:
        raise RuntimeError(f"HiGHS failed on block {blk.id}: {res.message}")
    return float(res.fun), np.asarray(res.x)


def block_table(blk, coords, max_bin=22):
    """Cheapest feasible point for each assignment of ``coords``.

    Returns ``(cost, argx)`` where ``cost`` has length ``2**len(coords)``
    (bit p of the index is the value of ``coords[p]``) and ``argx`` holds the
    lexicographically smallest minimising x (or None when infeasible).
    """
    n = blk.nBin
    if n > max_bin:
        raise OracleBudgetError(f"block {blk.id} has {n} binaries (limit {max_bin})")
    m = len(coords)
    cost = np.full(1 << m, math.inf)
    argx = [None] * (1 << m)
    weights = (1 << np.arange(m)).astype(np.int64)
    total = 1 << n
    A = blk.Ax
    # x enumerated in lexicographic order: bit (n-1-j) of the counter is x_j
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, ENUM_CHUNK):
        idx = np.arange(start, min(total, start + ENUM_CHUNK), dtype=np.int64)
        X = ((idx[:, None] >> shifts[None, :]) & 1).astype(np.int8) if n else np.zeros((len(idx), 0), np.int8)
        if blk.nCont == 0:
            ok = np.all(X @ A.T <= blk.b + 1e-9, axis=1) if len(blk.rows) else np.ones(len(idx), bool)
            vals = X @ blk.cvec if n else np.zeros(len(idx))
            keys = X[:, list(coords)] @ weights if m else np.zeros(len(idx), np.int64)
            rows = np.flatnonzero(ok)
            if not len(rows):
                continue
            # per key: smallest value, earliest (lex-smallest) x among ties
            order = rows[np.lexsort((rows, vals[rows], keys[rows]))]
            uk, first = np.unique(keys[order], return_index=True)
            for key, r in zip(uk.tolist(), order[first].tolist()):
                if vals[r] < cost[key] - 1e-12:
                    cost[key] = float(vals[r])
                    argx[key] = X[r].copy()
        else:
            for r in range(len(idx)):
                x = X[r].astype(float)
                v, _ = _completion(blk, x)
                if not math.isfinite(v):
                    continue
                v += float(blk.cvec @ x)
                key = int(X[r, list(coords)] @ weights) if m else 0
                if v < cost[key] - 1e-12:
                    cost[key] = v
                    argx[key] = X[r].copy()
    return cost, argx


def _block_coords(inst: Instance):
    """Per block: sorted gids and matching local coordinates."""
    out = {}
    for blk in inst.blocks:
        gm = inst.gid_map[blk.id]
        gids = sorted(gm)
        out[blk.id] = (gids, [gm[g] for g in gids])
    return out


@dataclass
class OracleResult:
    value: float
    solution: dict | None = None  # block id -> (x, y)
    assignment: dict = field(default_factory=dict)  # gid -> 0/1


def brute_force_opt(inst: Instance, max_gids: int = MAX_GLOBAL_GIDS) -> OracleResult:
    """Exact OPT by enumerating every consistent assignment of the coupled binaries."""
    gids = list(inst.gids)
    G = len(gids)
    if G > max_gids:
        raise OracleBudgetError(f"{G} coupled binaries exceed the limit of {max_gids}")
    pos = {g: i for i, g in enumerate(gids)}
    coords = _block_coords(inst)
    tables = {}
    for blk in inst.blocks:
        tables[blk.id] = block_table(blk, coords[blk.id][1])
    total = np.zeros(1 << G)
    idx = np.arange(1 << G, dtype=np.int64)
    for blk in inst.blocks:
        bg = coords[blk.id][0]
        key = np.zeros(1 << G, dtype=np.int64)
        for p, g in enumerate(bg):
            key |= ((idx >> pos[g]) & 1) << p
        total += tables[blk.id][0][key]
    best = int(np.argmin(total))
    val = float(total[best])
    if not math.isfinite(val):
        return OracleResult(math.inf)
    assign = {g: (best >> pos[g]) & 1 for g in gids}
    sol = {}
    for blk in inst.blocks:
        bg = coords[blk.id][0]
        key = sum(assign[g] << p for p, g in enumerate(bg))
        x = tables[blk.id][1][key]
        _, y = _completion(blk, x.astype(float))
        sol[blk.id] = (x, y)
    return OracleResult(val, sol, assign)


# ------------------------------------------------------------------ hull LP

def _features(inst: Instance, family, e):
    """Feature functions of one edge as (name, fn(assign dict) -> 0/1)."""
    edge = inst.edges[e]
    gids = list(edge.gids)
    if isinstance(family, MonomialFamily):
        subsets = family.perEdge.get(e, ())
        return [(tuple(sorted(S)), lambda a, S=tuple(S): float(all(a[g] for g in S)))
                for S in subsets]
    if family == "classical":
        return [((g,), lambda a, g=g: float(a[g])) for g in gids]
    if family == "full":
        fam = build_monomial_family(inst, max(1, len(gids)))
        return _features(inst, fam, e)
    if family == "vertices":
        out = []
        for bits in itertools.product((0, 1), repeat=len(gids)):
            out.append((bits, lambda a, bits=bits: float(all(a[g] == b for g, b in zip(gids, bits)))))
        return out
    raise ValueError(f"unknown family {family!r}")


def dual_oracle_hull_lp(inst: Instance, family="classical", extra_rows=(), tables=None) -> float:
    """Dual value via the primal characterisation: convex weights on each block's
    points, linked by equality of the family's features across every edge.

    ``family`` is ``"classical"``, ``"vertices"``, ``"full"`` or a
    :class:`MonomialFamily`.  ``extra_rows`` adds further dualised equalities
    ``sum_a w_A(a) fA(a) + sum_b w_B(b) fB(b) = 0`` given as
    ``(blockA, fA, blockB, fB)`` with ``f`` taking a gid -> bit dict.
    """
    coords = _block_coords(inst)
    if tables is None:
        tables = {blk.id: block_table(blk, coords[blk.id][1]) for blk in inst.blocks}
    cols = {}
    c = []
    for blk in inst.blocks:
        bg = coords[blk.id][0]
        cost = tables[blk.id][0]
        entries = []
        for key in range(len(cost)):
            if math.isfinite(cost[key]):
                a = {g: (key >> p) & 1 for p, g in enumerate(bg)}
                entries.append((len(c), a))
                c.append(cost[key])
        if not entries:
            return math.inf
        cols[blk.id] = entries
    nv = len(c)
    A_eq, b_eq = [], []
    for blk in inst.blocks:
        row = np.zeros(nv)
        for j, _ in cols[blk.id]:
            row[j] = 1.0
        A_eq.append(row)
        b_eq.append(1.0)
    for e, edge in enumerate(inst.edges):
        for _, fn in _features(inst, family, e):
            row = np.zeros(nv)
            for j, a in cols[edge.a]:
                row[j] += fn(a)
            for j, a in cols[edge.b]:
                row[j] -= fn(a)
            A_eq.append(row)
            b_eq.append(0.0)
    for ba, fa, bb, fb in extra_rows:
        row = np.zeros(nv)
        for j, a in cols[ba]:
            row[j] += fa(a)
        for j, a in cols[bb]:
            row[j] += fb(a)
        A_eq.append(row)
        b_eq.append(0.0)
    res = linprog(np.array(c), A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=[(0, None)] * nv, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status == 2:
        return math.inf
    if res.status != 0:
        raise RuntimeError(f"hull LP failed: {res.message}")
    return float(res.fun)


def hull_tables(inst: Instance):
    """Block tables for reuse across several hull-LP calls on one instance."""
    coords = _block_coords(inst)
    return {blk.id: block_table(blk, coords[blk.id][1]) for blk in inst.blocks}


# ------------------------------------------------------------------ good sets

@dataclass
class GoodSetReport:
    W: frozenset
    components: list          # list of sets of tree nodes
    classification: str       # k-good | good | neither
    chi: tuple = ()           # indicator over the sorted ground set

    @property
    def good(self) -> bool:
        return self.classification in ("good", "k-good")


def _components(nodes, edges):
    adj = {t: [] for t in nodes}
    for a, b in edges:
        if a in adj and b in adj:
            adj[a].append(b)
            adj[b].append(a)
    seen, comps = set(), []
    for t in sorted(nodes):
        if t in seen:
            continue
        comp, stack = {t}, [t]
        seen.add(t)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def classify_good(td: TreeDecomposition, W, k: int) -> GoodSetReport:
    W = frozenset(W)
    nodes = {t for t, bag in td.bags.items() if bag & W}
    comps = _components(nodes, td.tree_edges)
    all_small = True
    all_ok = True
    for comp in comps:
        cedges = [(a, b) for a, b in td.tree_edges if a in comp and b in comp]
        small = all(len(td.bags[a] & td.bags[b] & W) <= k for a, b in cedges)
        dominated = any(all(td.bags[j] & W <= td.bags[i] & W for j in comp) for i in comp)
        all_small &= small
        all_ok &= small or dominated
    cls = "k-good" if all_small else ("good" if all_ok else "neither")
    ground = sorted(set().union(*td.bags.values())) if td.bags else []
    chi = tuple(int(v in W) for v in ground)
    return GoodSetReport(W, comps, cls, chi)


def _maximal(sets):
    sets = sorted(set(sets), key=len, reverse=True)
    out = []
    for s in sets:
        if not any(s <= t for t in out):
            out.append(s)
    return out


def enumerate_good_sets(td: TreeDecomposition, k: int, max_vars: int = MAX_GOOD_VARS):
    """Maximal good and maximal k-good sets of a small layout."""
    ground = sorted(set().union(*td.bags.values())) if td.bags else []
    if len(ground) > max_vars:
        raise OracleBudgetError(f"{len(ground)} variables exceed the good-set limit {max_vars}")
    good, kgood = [], []
    for r in range(len(ground) + 1):
        for W in itertools.combinations(ground, r):
            rep = classify_good(td, W, k)
            if rep.classification == "k-good":
                kgood.append(rep.W)
                good.append(rep.W)
            elif rep.classification == "good":
                good.append(rep.W)
    return _maximal(good), _maximal(kgood)


def _cover_lp(ground, sets) -> float:
    """min sum alpha s.t. every ground element covered with weight >= 1 (own simplex)."""
    if not ground:
        return 0.0
    if not sets:
        return math.inf
    pos = {v: i for i, v in enumerate(ground)}
    A = np.zeros((len(ground), len(sets)))
    for j, S in enumerate(sets):
        for v in S:
            A[pos[v], j] = 1.0
    if np.any(A.sum(axis=1) == 0):
        return math.inf
    sol = solve_lp(LPProblem.make(np.ones(len(sets)), -A, -np.ones(len(ground)),
                                  np.zeros(len(sets)), np.full(len(sets), np.inf)))
    if sol.status != "optimal":
        return math.inf
    return sol.value


def compute_eta_theta(td: TreeDecomposition, k: int, goodSets=None):
    """(eta_k, theta_k): fractional covers of the ground set by good / k-good sets.

    ``goodSets`` may be supplied as ``(good, kgood)`` lists; otherwise they are
    enumerated (at most ``MAX_GOOD_VARS`` variables).
    """
    ground = sorted(set().union(*td.bags.values())) if td.bags else []
    if goodSets is None:
        good, kgood = _cached_good_sets(_td_key(td), k)
    else:
        good, kgood = goodSets
    return _cover_lp(ground, list(good)), _cover_lp(ground, list(kgood))


def _td_key(td):
    return (tuple(sorted((t, tuple(sorted(b))) for t, b in td.bags.items())),
            tuple(sorted(tuple(sorted(e)) for e in td.tree_edges)))


@lru_cache(maxsize=256)
def _cached_good_sets(key, k):
    bags, edges = key
    td = TreeDecomposition({t: frozenset(b) for t, b in bags}, list(edges))
    return enumerate_good_sets(td, k)


def two_stage_closed_form(Z: int, t: float):
    """(eta, theta, tau) for a two-stage layout with Z scenarios and t = k/n."""
    eta = 2.0 + (2.0 * t - Z * t - 1.0) / (Z - t)
    return eta, 1.0 / t, Z


def two_stage_layout(Z: int, n: int, nLocal: int = 1) -> TreeDecomposition:
    """Scenario 0 is the centre; every scenario holds the n first-stage variables."""
    bags = {}
    nxt = n
    for i in range(Z):
        bags[i] = frozenset(range(n)) | frozenset(range(nxt, nxt + nLocal))
        nxt += nLocal
    return TreeDecomposition(bags, [(0, i) for i in range(1, Z)])


# ------------------------------------------------------------------ bound certificates

@dataclass
class BoundCertificate:
    k: int
    t: float
    bound: float              # multiplicative factor in front of OPT
    etaK: float | None
    thetaK: float | None
    tau: int | None
    dual: float
    opt: float
    observedRatio: float
    passed: bool
    rule: str = ""
    violations: list = field(default_factory=list)


def _is_two_stage(inst: Instance) -> bool:
    """Star whose edges all share the same gid set with the centre."""
    if len(inst.edges) < 1:
        return False
    gsets = {frozenset(e.gids) for e in inst.edges}
    if len(gsets) != 1:
        return False
    deg = {}
    for e in inst.edges:
        deg[e.a] = deg.get(e.a, 0) + 1
        deg[e.b] = deg.get(e.b, 0) + 1
    return max(deg.values()) == len(inst.edges)


def bound_factor(inst: Instance, k: int):
    """(factor, t, eta, theta, tau, rule) for the instance's packing/covering tag."""
    kind = inst.kind
    if kind not in ("packing", "covering"):
        raise ValueError("bound certificates need a packing or covering instance")
    n = max(len(e.pairs) for e in inst.edges)
    t = min(k, n) / n
    if len(inst.blocks) == 2 and len(inst.edges) == 1:
        if kind == "packing":
            return 2.0 + 1.0 / (t - 2.0), t, None, None, 2, "two-block packing"
        return 1.0 / (2.0 - t), t, None, None, 2, "two-block covering"
    td = instance_layout(inst)
    ground = set().union(*td.bags.values())
    if len(ground) <= MAX_GOOD_VARS:
        eta, theta = compute_eta_theta(td, k)
        tau = td.tau()
        rule = "good-set LP"
    elif _is_two_stage(inst):
        eta, theta, tau = two_stage_closed_form(len(inst.blocks), t)
        rule = "two-stage closed form"
    else:
        raise OracleBudgetError("layout too large for good-set enumeration")
    if kind == "packing":
        return eta, t, eta, theta, tau, rule
    return theta / (1.0 - tau + tau * theta), t, eta, theta, tau, rule


def check_bounds(inst: Instance, k: int, dualValue: float, optValue: float,
                 tol: float = 1e-6) -> BoundCertificate:
    factor, t, eta, theta, tau, rule = bound_factor(inst, k)
    viol = []
    if factor * optValue > dualValue + tol:
        viol.append(f"lower bound {factor * optValue:.9g} exceeds dual {dualValue:.9g}")
    if dualValue > optValue + tol:
        viol.append(f"dual {dualValue:.9g} exceeds OPT {optValue:.9g}")
    ratio = dualValue / optValue if optValue != 0 else math.nan
    return BoundCertificate(k, t, factor, eta, theta, tau, dualValue, optValue, ratio,
                            not viol, rule, viol)


# ------------------------------------------------------------------ affine redundancy

@dataclass
class AffineCheck:
    classical: float
    with_affine: float
    with_quadratic: float | None
    passed: bool


def check_affine_redundancy(inst: Instance, tol: float = 1e-6, row=None) -> AffineCheck:
    """Adding a dualised affine coupling row never moves the classical dual.

    ``row`` defaults to ``sum x^A - sum x^B = 0`` over the edge's gids.  The
    quadratic contrast adds the product of the first two shared binaries.
    """
    if len(inst.edges) != 1:
        raise ValueError("affine redundancy check expects a two-block instance")
    edge = inst.edges[0]
    gids = list(edge.gids)
    tables = hull_tables(inst)
    base = dual_oracle_hull_lp(inst, "classical", tables=tables)
    if row is None:
        row = (edge.a, lambda a: float(sum(a[g] for g in gids)),
               edge.b, lambda a: -float(sum(a[g] for g in gids)))
    aff = dual_oracle_hull_lp(inst, "classical", [row], tables=tables)
    quad = None
    if len(gids) >= 2:
        g0, g1 = gids[0], gids[1]
        qrow = (edge.a, lambda a: float(a[g0] * a[g1]), edge.b, lambda a: -float(a[g0] * a[g1]))
        quad = dual_oracle_hull_lp(inst, "classical", [qrow], tables=tables)
    return AffineCheck(base, aff, quad, abs(aff - base) <= tol)
