"""Intersection graphs, tree decompositions and the block reformulation of a flat MIP."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import Block, CouplingEdge, Instance, Row


@dataclass(frozen=True)
class FlatMIP:
    c: tuple
    rows: tuple   # Row objects with ax over all variables, ay unused
    kinds: tuple  # "binary" | "continuous" per variable

    @property
    def n(self) -> int:
        return len(self.c)

    def validate(self):
        if len(self.kinds) != len(self.c):
            raise ValueError("kinds and cost lengths differ")
        for k in self.kinds:
            if k not in ("binary", "continuous"):
                raise ValueError(f"unknown variable kind {k!r}")
        for r in self.rows:
            for j, v in r.ax:
                if not 0 <= j < self.n:
                    raise ValueError(f"row index {j} out of range")
                if not np.isfinite(v):
                    raise ValueError("non-finite coefficient")


def flat_from_dict(d: dict) -> FlatMIP:
    """FlatMIP JSON: the Instance schema with a single block plus a ``kinds`` array.

    The block lists every variable under ``ax`` (``nBin`` is the variable
    count, ``nCont`` must be 0); ``kinds`` marks each one binary or continuous.
    """
    allowed = {"blocks", "edges", "meta", "kinds"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"flat MIP: unknown field(s) {sorted(extra)}")
    if len(d["blocks"]) != 1:
        raise ValueError("flat MIP must hold exactly one block")
    b = d["blocks"][0]
    bextra = set(b) - {"id", "nBin", "nCont", "c", "d", "rows"}
    if bextra:
        raise ValueError(f"flat MIP block: unknown field(s) {sorted(bextra)}")
    rows = []
    for r in b.get("rows", []):
        rextra = set(r) - {"ax", "ay", "rhs"}
        if rextra:
            raise ValueError(f"flat MIP row: unknown field(s) {sorted(rextra)}")
        rows.append(Row(tuple((int(j), float(v)) for j, v in r.get("ax", [])), (), float(r["rhs"])))
    m = FlatMIP(tuple(float(v) for v in b["c"]), tuple(rows), tuple(d["kinds"]))
    m.validate()
    return m


def flat_to_dict(m: FlatMIP) -> dict:
    return {
        "blocks": [{"id": 0, "nBin": m.n, "nCont": 0, "c": list(m.c), "d": [],
                    "rows": [{"ax": [[j, v] for j, v in r.ax], "ay": [], "rhs": r.rhs}
                             for r in m.rows]}],
        "edges": [], "meta": {"type": "general"}, "kinds": list(m.kinds),
    }


def load_flat(path) -> FlatMIP:
    with open(path) as fh:
        return flat_from_dict(json.load(fh))


@dataclass
class IntersectionGraph:
    vertices: tuple
    adj: dict

    def edges(self):
        return sorted((u, v) for u in self.adj for v in self.adj[u] if u < v)


@dataclass
class TreeDecomposition:
    bags: dict               # node id -> frozenset of vertices
    tree_edges: list = field(default_factory=list)

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags.values()), default=0) - 1

    def neighbors(self, t):
        out = []
        for a, b in self.tree_edges:
            if a == t:
                out.append(b)
            elif b == t:
                out.append(a)
        return out

    def tau(self) -> int:
        """Largest number of bags sharing one vertex."""
        count = {}
        for bag in self.bags.values():
            for v in bag:
                count[v] = count.get(v, 0) + 1
        return max(count.values(), default=0)


def build_intersection_graph(m: FlatMIP) -> IntersectionGraph:
    adj = {v: set() for v in range(m.n)}
    for r in m.rows:
        sup = sorted({j for j, v in r.ax if v != 0.0})
        for i, u in enumerate(sup):
            for w in sup[i + 1:]:
                adj[u].add(w)
                adj[w].add(u)
    return IntersectionGraph(tuple(range(m.n)), adj)


def _min_fill_order(adj):
    g = {v: set(n) for v, n in adj.items()}
    order = []
    while g:
        best, best_key = None, None
        for v in sorted(g):
            nb = list(g[v])
            fill = 0
            for i, a in enumerate(nb):
                for b in nb[i + 1:]:
                    if b not in g[a]:
                        fill += 1
            key = (fill, len(nb), v)
            if best_key is None or key < best_key:
                best, best_key = v, key
        nb = g.pop(best)
        for a in nb:
            g[a].discard(best)
            g[a] |= nb - {a}
        order.append(best)
    return order


def tree_decompose(g: IntersectionGraph) -> TreeDecomposition:
    """Min-fill elimination, then merge bags contained in a neighbour."""
    order = _min_fill_order(g.adj)
    pos = {v: i for i, v in enumerate(order)}
    work = {v: set(n) for v, n in g.adj.items()}
    bags, parent = {}, {}
    for v in order:
        later = {u for u in work[v] if pos[u] > pos[v]}
        bags[v] = frozenset(later | {v})
        for a in later:
            work[a] |= later - {a}
        if later:
            parent[v] = min(later, key=lambda u: pos[u])
    nodes = list(order)
    edges = {(v, parent[v]) for v in nodes if v in parent}
    # join separate components into one tree
    roots = [v for v in nodes if v not in parent]
    for a, b in zip(roots, roots[1:]):
        edges.add((a, b))

    nbr = {v: set() for v in nodes}
    for a, b in edges:
        nbr[a].add(b)
        nbr[b].add(a)
    alive = set(nodes)
    changed = True
    while changed:
        changed = False
        for v in sorted(alive):
            for u in sorted(nbr[v]):
                if bags[v] <= bags[u]:
                    for w in nbr[v] - {u}:
                        nbr[w].discard(v)
                        nbr[w].add(u)
                        nbr[u].add(w)
                    nbr[u].discard(v)
                    alive.discard(v)
                    nbr.pop(v)
                    changed = True
                    break
            if changed:
                break
    keep = sorted(alive, key=lambda v: pos[v])
    relabel = {v: i for i, v in enumerate(keep)}
    out_bags = {relabel[v]: bags[v] for v in keep}
    out_edges = sorted({tuple(sorted((relabel[a], relabel[b]))) for a in keep for b in nbr[a]})
    if not out_bags and g.vertices:
        out_bags = {0: frozenset(g.vertices)}
    return TreeDecomposition(out_bags, out_edges)


def validate_tree_decomposition(g: IntersectionGraph, td: TreeDecomposition):
    """Returns (ok, violations) for the three conditions."""
    viol = []
    nodes = set(td.bags)
    # the tree itself
    parent = {t: t for t in nodes}

    def find(t):
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for a, b in td.tree_edges:
        if a not in nodes or b not in nodes:
            viol.append(f"tree edge ({a}, {b}) names an unknown node")
            continue
        ra, rb = find(a), find(b)
        if ra == rb:
            viol.append("tree edges contain a cycle")
        parent[ra] = rb
    if len({find(t) for t in nodes}) > 1:
        viol.append("tree is disconnected")

    covered = set().union(*td.bags.values()) if td.bags else set()
    for v in g.vertices:
        if v not in covered:
            viol.append(f"condition 3: vertex {v} in no bag")
    for u, v in g.edges():
        if not any(u in b and v in b for b in td.bags.values()):
            viol.append(f"condition 2: edge ({u}, {v}) in no bag")
    for v in g.vertices:
        holders = {t for t, b in td.bags.items() if v in b}
        if not holders:
            continue
        start = next(iter(holders))
        seen, stack = {start}, [start]
        while stack:
            t = stack.pop()
            for s in td.neighbors(t):
                if s in holders and s not in seen:
                    seen.add(s)
                    stack.append(s)
        if seen != holders:
            viol.append(f"condition 1: bags holding {v} are not a subtree")
    return not viol, viol


class DecompositionError(ValueError):
    pass


class UnsupportedCoupling(ValueError):
    pass


def reformulate_to_blocks(m: FlatMIP, td: TreeDecomposition) -> Instance:
    """One block per tree node; each row goes to the smallest node whose bag covers it.

    A variable's cost is charged to the smallest node holding it, zero elsewhere.
    Global ids of coupled variables are the flat variable indices.
    """
    nodes = sorted(td.bags)
    for a, b in td.tree_edges:
        for v in td.bags[a] & td.bags[b]:
            if m.kinds[v] != "binary":
                raise UnsupportedCoupling(f"variable {v} is continuous and shared by bags {a}, {b}")
    assign = {t: [] for t in nodes}
    for k, r in enumerate(m.rows):
        sup = {j for j, v in r.ax if v != 0.0}
        home = next((t for t in nodes if sup <= td.bags[t]), None)
        if home is None:
            raise DecompositionError(f"row {k} support not contained in any bag")
        assign[home].append(r)
    owner = {}
    for t in nodes:
        for v in td.bags[t]:
            owner.setdefault(v, t)

    local = {}
    blocks = []
    for t in nodes:
        bins = sorted(v for v in td.bags[t] if m.kinds[v] == "binary")
        conts = sorted(v for v in td.bags[t] if m.kinds[v] == "continuous")
        lx = {v: i for i, v in enumerate(bins)}
        ly = {v: i for i, v in enumerate(conts)}
        local[t] = lx
        rows = []
        for r in assign[t]:
            ax = tuple((lx[j], v) for j, v in r.ax if j in lx)
            ay = tuple((ly[j], v) for j, v in r.ax if j in ly)
            rows.append(Row(ax, ay, r.rhs))
        c = tuple(m.c[v] if owner[v] == t else 0.0 for v in bins)
        d = tuple(m.c[v] if owner[v] == t else 0.0 for v in conts)
        blocks.append(Block(t, len(bins), len(conts), c, d, tuple(rows)))
    edges = []
    for a, b in sorted(td.tree_edges):
        shared = sorted(td.bags[a] & td.bags[b])
        edges.append(CouplingEdge(a, b, tuple((local[a][v], local[b][v], v) for v in shared)))
    return Instance(tuple(blocks), tuple(edges), {"type": "general"})


def instance_layout(inst: Instance) -> TreeDecomposition:
    """Bags of an Instance on a global variable numbering.

    Shared binaries keep their gid; unmatched locals get fresh ids above them.
    """
    nxt = (max(inst.gids) + 1) if inst.gids else 0
    bags = {}
    for blk in inst.blocks:
        gm = inst.gid_map[blk.id]
        mine = set(gm.keys())
        n_local = blk.nBin - len(gm) + blk.nCont
        mine |= set(range(nxt, nxt + n_local))
        nxt += n_local
        bags[blk.id] = frozenset(mine)
    return TreeDecomposition(bags, [(e.a, e.b) for e in inst.edges])


def flat_of_instance(inst: Instance) -> FlatMIP:
    """Inverse of the reformulation: one flat variable per gid and per unmatched local."""
    nxt = (max(inst.gids) + 1) if inst.gids else 0
    kinds = {}
    cost = {}
    rows = []
    for blk in inst.blocks:
        gm = {loc: g for g, loc in inst.gid_map[blk.id].items()}
        xmap = {}
        for j in range(blk.nBin):
            if j in gm:
                xmap[j] = gm[j]
            else:
                xmap[j] = nxt
                nxt += 1
            kinds[xmap[j]] = "binary"
            cost[xmap[j]] = cost.get(xmap[j], 0.0) + blk.c[j]
        ymap = {}
        for j in range(blk.nCont):
            ymap[j] = nxt
            kinds[nxt] = "continuous"
            cost[nxt] = blk.d[j]
            nxt += 1
        for r in blk.rows:
            ax = tuple((xmap[j], v) for j, v in r.ax) + tuple((ymap[j], v) for j, v in r.ay)
            rows.append(Row(ax, (), r.rhs))
    n = nxt
    return FlatMIP(tuple(cost.get(v, 0.0) for v in range(n)), tuple(rows),
                   tuple(kinds.get(v, "binary") for v in range(n)))
