"""Dual function evaluation: classical, monomial (M), vertex (V) and scenario decomposition.

Sign convention: on every edge the lower-id block receives ``+lambda`` / ``+mu``
and the other block ``-lambda`` / ``-mu``.  Subgradients are therefore
``(lower-id copy) - (higher-id copy)`` of the dualised quantity.

Multipliers live in :class:`DualIterate`; optimizers see them through a flat
sparse dict with keys ``("l", e, p)``, ``("m", e, S)`` and ``("v", e, key)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Instance, MonomialFamily
from .subsolve import (CompletionCache, SubproblemQuery, SubproblemResult, key_bits,
                       solve_block_mip, solve_vl_subproblem, vertex_key)


@dataclass
class DualIterate:
    lam: dict = field(default_factory=dict)      # (edge, pair index) -> value
    muMono: dict = field(default_factory=dict)   # (edge, frozenset of gids) -> value
    muVert: dict = field(default_factory=dict)   # (edge, vertexKey) -> value
    nonneg_mu: bool = False

    def flat(self) -> dict:
        out = {}
        for (e, p), v in self.lam.items():
            out[("l", e, p)] = v
        for (e, S), v in self.muMono.items():
            out[("m", e, tuple(sorted(S)))] = v
        for (e, k), v in self.muVert.items():
            out[("v", e, k)] = v
        return out

    @classmethod
    def from_flat(cls, d: dict, nonneg_mu=False) -> "DualIterate":
        it = cls(nonneg_mu=nonneg_mu)
        for key, v in d.items():
            tag = key[0]
            if tag == "l":
                it.lam[(key[1], key[2])] = v
            elif tag == "m":
                it.muMono[(key[1], frozenset(key[2]))] = v
            elif tag == "v":
                it.muVert[(key[1], key[2])] = v
            else:
                raise KeyError(key)
        return it

    def project(self) -> "DualIterate":
        """Clip mu at zero when the one-sided (inequality) form is selected."""
        if not self.nonneg_mu:
            return self
        return DualIterate(dict(self.lam),
                           {k: max(v, 0.0) for k, v in self.muMono.items()},
                           {k: max(v, 0.0) for k, v in self.muVert.items()}, True)


@dataclass
class EvalResult:
    value: float
    subgradLambda: dict = field(default_factory=dict)
    subgradMuMonomial: dict = field(default_factory=dict)
    subgradMuVertex: dict = field(default_factory=dict)
    blockSolutions: dict = field(default_factory=dict)  # block id -> (x, y, value)
    feasible: bool = True
    oracleCalls: int = 0

    def flat_subgradient(self) -> dict:
        out = {}
        for (e, p), v in self.subgradLambda.items():
            out[("l", e, p)] = v
        for (e, S), v in self.subgradMuMonomial.items():
            out[("m", e, tuple(sorted(S)))] = v
        for (e, k), v in self.subgradMuVertex.items():
            out[("v", e, k)] = v
        return out

    def norm2(self) -> float:
        return float(sum(v * v for d in (self.subgradLambda, self.subgradMuMonomial,
                                         self.subgradMuVertex) for v in d.values()))


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _adjusted_costs(inst: Instance, lam: dict):
    costs = {blk.id: blk.cvec.copy() for blk in inst.blocks}
    for (e, p), v in lam.items():
        if v == 0.0:
            continue
        edge = inst.edges[e]
        ia, ib, _ = edge.pairs[p]
        costs[edge.a][ia] += edge.sign(edge.a) * v
        costs[edge.b][ib] += edge.sign(edge.b) * v
    return costs


def _lambda_subgradient(inst, sols):
    g = {}
    for e, edge in enumerate(inst.edges):
        xl = sols[edge.low][0]
        xh = sols[edge.high][0]
        for p, (ia, ib, _) in enumerate(edge.pairs):
            la, lb = (ia, ib) if edge.a == edge.low else (ib, ia)
            diff = float(xl[la]) - float(xh[lb])
            if diff != 0.0:
                g[(e, p)] = diff
    return g


def _finish(inst, results, value_parts, calls):
    if any(r.status != "optimal" for r in results.values()):
        return EvalResult(math.inf, feasible=False, oracleCalls=calls,
                          blockSolutions={i: (r.x, r.y, r.value) for i, r in results.items()})
    sols = {i: (r.x, r.y, r.value) for i, r in results.items()}
    return EvalResult(float(sum(value_parts)), blockSolutions=sols, oracleCalls=calls)


def eval_classical(inst: Instance, it: DualIterate | None = None, jobs: int = 1,
                   method: str = "auto") -> EvalResult:
    it = it or DualIterate()
    costs = _adjusted_costs(inst, it.lam)

    def solve(blk):
        q = SubproblemQuery(blk.id, costs[blk.id], blk.dvec)
        return blk.id, solve_block_mip(blk, q, method)

    out = dict(_map(solve, list(inst.blocks), jobs))
    res = _finish(inst, out, [r.value for r in out.values()], len(out))
    if res.feasible:
        res.subgradLambda = _lambda_subgradient(inst, res.blockSolutions)
    return res


def eval_m_lagrangian(inst: Instance, fam: MonomialFamily, it: DualIterate | None = None,
                      jobs: int = 1, method: str = "auto") -> EvalResult:
    """Singleton multipliers are the lambda entries; muMono holds subsets of size >= 2."""
    it = it or DualIterate()
    it = it.project()
    allowed = {(e, S) for e, subs in fam.perEdge.items() for S in subs}
    for key in it.muMono:
        if key not in allowed:
            raise ValueError(f"multiplier {key} is not in the monomial family")
    costs = _adjusted_costs(inst, it.lam)
    mono = {blk.id: {} for blk in inst.blocks}
    for (e, S), v in it.muMono.items():
        if v == 0.0:
            continue
        edge = inst.edges[e]
        if len(S) == 1:
            (g,) = tuple(S)
            p = edge.gids.index(g)
            ia, ib, _ = edge.pairs[p]
            costs[edge.a][ia] += edge.sign(edge.a) * v
            costs[edge.b][ib] += edge.sign(edge.b) * v
            continue
        for side in (edge.a, edge.b):
            gm = edge.gid_to_local(side)
            loc = tuple(sorted(gm[g] for g in S))
            mono[side][loc] = mono[side].get(loc, 0.0) + edge.sign(side) * v

    def solve(blk):
        q = SubproblemQuery(blk.id, costs[blk.id], blk.dvec, monomialCost=mono[blk.id])
        return blk.id, solve_block_mip(blk, q, method)

    out = dict(_map(solve, list(inst.blocks), jobs))
    res = _finish(inst, out, [r.value for r in out.values()], len(out))
    if not res.feasible:
        return res
    res.subgradLambda = _lambda_subgradient(inst, res.blockSolutions)
    g = {}
    for e, edge in enumerate(inst.edges):
        xl = res.blockSolutions[edge.low][0]
        xh = res.blockSolutions[edge.high][0]
        ml = edge.gid_to_local(edge.low)
        mh = edge.gid_to_local(edge.high)
        for S in fam.perEdge.get(e, ()):
            if len(S) < 2:
                continue
            wl = float(all(xl[ml[s]] for s in S))
            wh = float(all(xh[mh[s]] for s in S))
            if wl != wh:
                g[(e, S)] = wl - wh
    res.subgradMuMonomial = g
    return res


def _star_groups(inst: Instance):
    """Per block: (coordinate tuple, list of (edge, permutation into that tuple)).

    Every block must see all its incident edges on one coordinate set; that
    holds for two-block and star instances.
    """
    groups = {}
    for blk in inst.blocks:
        inc = inst.incident(blk.id)
        if not inc:
            groups[blk.id] = ((), [])
            continue
        base = inst.edges[inc[0]].local(blk.id)
        perms = []
        for e in inc:
            loc = inst.edges[e].local(blk.id)
            if set(loc) != set(base) or len(loc) != len(base):
                raise ValueError(
                    "V-Lagrangian needs a two-block or star instance: block "
                    f"{blk.id} shares different variable sets on different edges")
            perms.append((e, [base.index(j) for j in loc]))
        groups[blk.id] = (base, perms)
    return groups


def _permute_key(key, perm, length):
    """Edge-order key -> block-order key (bit perm[p] of the result is bit p of key)."""
    bits = key_bits(key, length)
    out = np.zeros(length, dtype=np.int8)
    for p, q in enumerate(perm):
        out[q] = bits[p]
    return vertex_key(out)


def eval_v_lagrangian(inst: Instance, it: DualIterate | None = None, scale: float = 2.0,
                      cache: CompletionCache | None = None, jobs: int = 1,
                      method: str = "auto") -> EvalResult:
    it = it or DualIterate()
    it = it.project()
    groups = _star_groups(inst)
    costs = _adjusted_costs(inst, it.lam)
    pen = {blk.id: {} for blk in inst.blocks}
    perm_of = {}
    for blk_id, (base, perms) in groups.items():
        for e, perm in perms:
            perm_of[(blk_id, e)] = perm
    for (e, key), v in it.muVert.items():
        if v == 0.0:
            continue
        edge = inst.edges[e]
        n = len(edge.pairs)
        for side in (edge.a, edge.b):
            k2 = _permute_key(key, perm_of[(side, e)], n)
            pen[side][k2] = pen[side].get(k2, 0.0) + edge.sign(side) * scale * v

    def solve(blk):
        base = groups[blk.id][0]
        q = SubproblemQuery(blk.id, costs[blk.id], blk.dvec, vertexPenalty=pen[blk.id],
                            coords=base)
        return blk.id, solve_vl_subproblem(blk, q, cache, method)

    out = dict(_map(solve, list(inst.blocks), jobs))
    res = _finish(inst, out, [r.value for r in out.values()], len(out))
    if not res.feasible:
        return res
    res.subgradLambda = _lambda_subgradient(inst, res.blockSolutions)
    g = {}
    for e, edge in enumerate(inst.edges):
        kl = vertex_key(res.blockSolutions[edge.low][0][list(edge.local(edge.low))])
        kh = vertex_key(res.blockSolutions[edge.high][0][list(edge.local(edge.high))])
        if kl != kh:
            g[(e, kl)] = g.get((e, kl), 0.0) + scale
            g[(e, kh)] = g.get((e, kh), 0.0) - scale
    res.subgradMuVertex = g
    return res


# ------------------------------------------------------------------ primal recovery

def _fixed_solve(blk, fixed, cache):
    key = (blk.id, tuple(sorted(fixed.items())))
    if key in cache:
        return cache[key]
    q = SubproblemQuery(blk.id, blk.cvec.copy(), blk.dvec, fixed=dict(fixed))
    res = solve_block_mip(blk, q)
    cache[key] = res
    return res


def recover_primal_bound(inst: Instance, candidates: dict, memo: dict | None = None):
    """Cross-fix each candidate's shared binaries through the tree.

    ``candidates`` maps block id -> (x, y).  Returns ``(solution, value)`` for
    the best coupled feasible completion, or ``None``.
    """
    memo = {} if memo is None else memo
    adj = {blk.id: [] for blk in inst.blocks}
    for edge in inst.edges:
        adj[edge.a].append(edge.b)
        adj[edge.b].append(edge.a)
    best = None
    for src in sorted(candidates):
        x, y = candidates[src]
        blk = inst.block(src)
        if not blk.is_feasible(x, y):
            continue
        known = {g: int(round(x[loc])) for g, loc in inst.gid_map[src].items()}
        sol = {src: (np.asarray(x, dtype=np.int8), np.asarray(y if y is not None else [], dtype=float))}
        order = [src]
        seen = {src}
        ok = True
        while order and ok:
            cur = order.pop(0)
            for nb in sorted(adj[cur]):
                if nb in seen:
                    continue
                seen.add(nb)
                nblk = inst.block(nb)
                fixed = {loc: known[g] for g, loc in inst.gid_map[nb].items() if g in known}
                res = _fixed_solve(nblk, fixed, memo)
                if res.status != "optimal":
                    ok = False
                    break
                sol[nb] = (res.x, res.y)
                for g, loc in inst.gid_map[nb].items():
                    known.setdefault(g, int(res.x[loc]))
                order.append(nb)
        if not ok:
            continue
        # blocks not reachable from src (forest) are solved freely
        for other in inst.blocks:
            if other.id not in sol:
                fixed = {loc: known[g] for g, loc in inst.gid_map[other.id].items() if g in known}
                res = _fixed_solve(other, fixed, memo)
                if res.status != "optimal":
                    ok = False
                    break
                sol[other.id] = (res.x, res.y)
                for g, loc in inst.gid_map[other.id].items():
                    known.setdefault(g, int(res.x[loc]))
        if not ok or not inst.is_feasible(sol):
            continue
        val = inst.objective(sol)
        if best is None or val < best[1] - 1e-12:
            best = (sol, val)
    return best


# ------------------------------------------------------------------ SDA

@dataclass
class SDAState:
    removed: set = field(default_factory=set)  # keys in the shared coordinate order
    UB: float = math.inf
    LB: float = -math.inf
    incumbent: dict | None = None
    iterations: int = 0
    status: str = "running"  # optimal | infeasible-subproblem | budget
    history: list = field(default_factory=list)  # (iteration, LB, UB, |removed|)


def run_sda(inst: Instance, policy: str = "lambdaFixedZero", budget: int = 100,
            tol: float = 1e-9, jobs: int = 1) -> SDAState:
    """Scenario decomposition: exclude each iteration's argmins instead of pricing them."""
    if policy not in ("lambdaFixedZero", "lambdaSubgradient"):
        raise ValueError(f"unknown policy {policy!r}")
    groups = _star_groups(inst)
    # shared coordinate order = first edge's order; every block translates to it
    ref_e = 0
    n = len(inst.edges[ref_e].pairs) if inst.edges else 0
    ref_gids = inst.edges[ref_e].gids if inst.edges else ()
    to_block = {}
    for blk in inst.blocks:
        gm = inst.gid_map[blk.id]
        base = groups[blk.id][0]
        # position of each shared gid inside the block's coordinate tuple
        to_block[blk.id] = [base.index(gm[g]) for g in ref_gids] if base else []

    def shared_key(blk_id, x):
        base = groups[blk_id][0]
        bits = [int(x[base[q]]) for q in to_block[blk_id]]
        return vertex_key(bits)

    def block_key(blk_id, key):
        if not to_block[blk_id]:
            return key
        return _permute_key(key, to_block[blk_id], n)

    st = SDAState()
    lam = {}
    memo = {}
    while st.iterations < budget:
        costs = _adjusted_costs(inst, lam)

        def solve(blk):
            excl = frozenset(block_key(blk.id, k) for k in st.removed)
            q = SubproblemQuery(blk.id, costs[blk.id], blk.dvec, excluded=excl,
                                coords=groups[blk.id][0])
            return blk.id, solve_block_mip(blk, q)

        out = dict(_map(solve, list(inst.blocks), jobs))
        st.iterations += 1
        if any(r.status != "optimal" for r in out.values()):
            st.status = "infeasible-subproblem"
            st.LB = max(st.LB, st.UB) if math.isfinite(st.UB) else st.LB
            st.history.append((st.iterations, st.LB, st.UB, len(st.removed)))
            break
        p = sum(r.value for r in out.values())
        st.LB = max(st.LB, p)
        cands = {i: (r.x, r.y) for i, r in out.items()}
        rec = recover_primal_bound(inst, cands, memo)
        if rec is not None and rec[1] < st.UB:
            st.incumbent, st.UB = rec
        for i, r in out.items():
            st.removed.add(shared_key(i, r.x))
        if st.UB - st.LB <= tol:
            st.status = "optimal"
            st.LB = min(st.LB, st.UB)
            st.history.append((st.iterations, st.LB, st.UB, len(st.removed)))
            break
        st.history.append((st.iterations, st.LB, st.UB, len(st.removed)))
        if policy == "lambdaSubgradient" and math.isfinite(st.UB):
            sols = {i: (r.x, r.y, r.value) for i, r in out.items()}
            g = _lambda_subgradient(inst, sols)
            nrm = sum(v * v for v in g.values())
            if nrm > 0:
                step = (st.UB - p) / nrm
                for k, v in g.items():
                    lam[k] = lam.get(k, 0.0) + step * v
    else:
        st.status = "budget"
    return st


# ------------------------------------------------------------------ evaluator for optimizers

class DualObjective:
    """Callable wrapping one dual method for the optimizers.

    ``__call__(point)`` takes a flat multiplier dict and returns
    ``(value, subgradient dict, EvalResult)``.
    """

    def __init__(self, inst: Instance, method: str, k: int | None = None, scale: float = 2.0,
                 jobs: int = 1, nonneg_mu: bool = False, fam: MonomialFamily | None = None):
        self.inst = inst
        self.method = method
        self.scale = scale
        self.jobs = jobs
        self.nonneg_mu = nonneg_mu
        self.cache = CompletionCache()
        self.calls = 0
        self.oracle_calls = 0
        self.last = None
        if method == "m":
            from .model import build_monomial_family
            self.fam = fam if fam is not None else build_monomial_family(inst, k or 2)
        elif method == "v":
            _star_groups(inst)
            self.fam = None
        elif method == "l":
            self.fam = None
        else:
            raise ValueError(f"unknown dual method {method!r}")

    def __call__(self, point: dict):
        it = DualIterate.from_flat(point, self.nonneg_mu)
        if self.method == "l":
            res = eval_classical(self.inst, it, self.jobs)
        elif self.method == "m":
            res = eval_m_lagrangian(self.inst, self.fam, it, self.jobs)
        else:
            res = eval_v_lagrangian(self.inst, it, self.scale, self.cache, self.jobs)
        self.calls += 1
        self.oracle_calls += res.oracleCalls
        self.last = res
        return res.value, res.flat_subgradient(), res

    def project(self, point: dict) -> dict:
        if not self.nonneg_mu:
            return point
        return {k: (max(v, 0.0) if k[0] in ("m", "v") else v) for k, v in point.items()}
