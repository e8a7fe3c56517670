"""Block-structured mixed-binary programs.

Every block minimises ``c.x + d.y`` over binaries ``x`` and continuous
``y >= 0`` subject to rows ``ax.x + ay.y <= rhs``.  Coupling edges equate
binary coordinates of two blocks; each matched pair carries a global id so the
same shared variable can be followed across the tree.

Local coordinates on an edge use one index space per block: ``0..nBin-1`` are
the binaries, ``nBin..nBin+nCont-1`` the continuous variables (only useful to
report a malformed edge).
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

INSTANCE_TYPES = ("packing", "covering", "general")


@dataclass(frozen=True)
class Row:
    ax: tuple  # ((idx, coef), ...)
    ay: tuple
    rhs: float


@dataclass(frozen=True)
class Block:
    id: int
    nBin: int
    nCont: int
    c: tuple
    d: tuple
    rows: tuple = ()

    @cached_property
    def Ax(self) -> np.ndarray:
        M = np.zeros((len(self.rows), self.nBin))
        for i, r in enumerate(self.rows):
            for j, v in r.ax:
                M[i, j] += v
        return M

    @cached_property
    def Ay(self) -> np.ndarray:
        M = np.zeros((len(self.rows), self.nCont))
        for i, r in enumerate(self.rows):
            for j, v in r.ay:
                M[i, j] += v
        return M

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([r.rhs for r in self.rows], dtype=float)

    @cached_property
    def cvec(self) -> np.ndarray:
        return np.array(self.c, dtype=float)

    @cached_property
    def dvec(self) -> np.ndarray:
        return np.array(self.d, dtype=float)

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(block_to_dict(self), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()

    def objective(self, x, y=None) -> float:
        v = float(self.cvec @ np.asarray(x, dtype=float)) if self.nBin else 0.0
        if self.nCont:
            v += float(self.dvec @ np.asarray(y, dtype=float))
        return v

    def is_feasible(self, x, y=None, tol=1e-7) -> bool:
        if not self.rows:
            return True
        act = self.Ax @ np.asarray(x, dtype=float)
        if self.nCont:
            y = np.asarray(y, dtype=float)
            if np.any(y < -tol):
                return False
            act = act + self.Ay @ y
        return bool(np.all(act <= self.b + tol))


@dataclass(frozen=True)
class CouplingEdge:
    a: int
    b: int
    pairs: tuple  # ((localA, localB, gid), ...)

    @property
    def low(self) -> int:
        return min(self.a, self.b)

    @property
    def high(self) -> int:
        return max(self.a, self.b)

    def sign(self, block_id: int) -> int:
        """+1 for the lower-id endpoint, -1 for the other."""
        return 1 if block_id == self.low else -1

    def local(self, block_id: int) -> tuple:
        """Local coordinates of the matched pairs on ``block_id``'s side, in pair order."""
        if block_id == self.a:
            return tuple(p[0] for p in self.pairs)
        if block_id == self.b:
            return tuple(p[1] for p in self.pairs)
        raise KeyError(block_id)

    @property
    def gids(self) -> tuple:
        return tuple(p[2] for p in self.pairs)

    def gid_to_local(self, block_id: int) -> dict:
        return dict(zip(self.gids, self.local(block_id)))


@dataclass(frozen=True)
class Instance:
    blocks: tuple
    edges: tuple = ()
    meta: dict = field(default_factory=dict)

    @cached_property
    def index(self) -> dict:
        return {blk.id: k for k, blk in enumerate(self.blocks)}

    def block(self, block_id: int) -> Block:
        return self.blocks[self.index[block_id]]

    @property
    def kind(self) -> str:
        return self.meta.get("type", "general")

    def incident(self, block_id: int) -> list:
        return [e for e, edge in enumerate(self.edges) if block_id in (edge.a, edge.b)]

    @cached_property
    def gid_map(self) -> dict:
        """block id -> {gid: local index} over all incident edges."""
        out = {blk.id: {} for blk in self.blocks}
        for edge in self.edges:
            for ia, ib, g in edge.pairs:
                out[edge.a].setdefault(g, ia)
                out[edge.b].setdefault(g, ib)
        return out

    @cached_property
    def gids(self) -> tuple:
        return tuple(sorted({p[2] for e in self.edges for p in e.pairs}))

    @property
    def n_coupled(self) -> int:
        return len(self.gids)

    def objective(self, sol: dict) -> float:
        return sum(self.block(i).objective(x, y) for i, (x, y) in sol.items())

    def is_feasible(self, sol: dict, tol=1e-7) -> bool:
        for i, (x, y) in sol.items():
            if not self.block(i).is_feasible(x, y, tol):
                return False
        for edge in self.edges:
            xa, xb = sol[edge.a][0], sol[edge.b][0]
            for ia, ib, _ in edge.pairs:
                if abs(xa[ia] - xb[ib]) > tol:
                    return False
        return True


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def make_block(id, nBin, nCont, c, d, rows) -> Block:
    """Build a Block from loose data; rows are (ax, ay, rhs) with ax/ay as dicts or pair lists."""
    norm = []
    for r in rows:
        if isinstance(r, Row):
            norm.append(r)
            continue
        ax, ay, rhs = r
        ax = ax.items() if isinstance(ax, dict) else ax
        ay = ay.items() if isinstance(ay, dict) else ay
        norm.append(Row(tuple((int(j), float(v)) for j, v in ax),
                        tuple((int(j), float(v)) for j, v in ay), float(rhs)))
    return Block(int(id), int(nBin), int(nCont), tuple(float(v) for v in c),
                 tuple(float(v) for v in d), tuple(norm))


def validate_instance(inst: Instance) -> ValidationReport:
    rep = ValidationReport()
    ids = [blk.id for blk in inst.blocks]
    if len(set(ids)) != len(ids):
        rep.violations.append("duplicate block ids")
    if inst.meta.get("type", "general") not in INSTANCE_TYPES:
        rep.violations.append(f"unknown instance type {inst.meta.get('type')!r}")
    for blk in inst.blocks:
        if blk.nBin < 0 or blk.nCont < 0:
            rep.violations.append(f"block {blk.id}: negative dimension")
            continue
        if len(blk.c) != blk.nBin or len(blk.d) != blk.nCont:
            rep.violations.append(f"block {blk.id}: cost length mismatch")
        if not all(math.isfinite(v) for v in blk.c + blk.d):
            rep.violations.append(f"block {blk.id}: non-finite cost")
        for k, r in enumerate(blk.rows):
            if not math.isfinite(r.rhs):
                rep.violations.append(f"block {blk.id} row {k}: non-finite rhs")
            for j, v in r.ax:
                if not 0 <= j < blk.nBin:
                    rep.violations.append(f"block {blk.id} row {k}: x index {j} out of range")
                if not math.isfinite(v):
                    rep.violations.append(f"block {blk.id} row {k}: non-finite coefficient")
            for j, v in r.ay:
                if not 0 <= j < blk.nCont:
                    rep.violations.append(f"block {blk.id} row {k}: y index {j} out of range")
                if not math.isfinite(v):
                    rep.violations.append(f"block {blk.id} row {k}: non-finite coefficient")

    known = set(ids)
    parent = {i: i for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    forest = True
    gid_home = {}
    for e, edge in enumerate(inst.edges):
        if edge.a not in known or edge.b not in known:
            rep.violations.append(f"edge {e}: unknown block id")
            continue
        if edge.a == edge.b:
            rep.violations.append(f"edge {e}: self loop")
            continue
        ra, rb = find(edge.a), find(edge.b)
        if ra == rb:
            forest = False
        else:
            parent[ra] = rb
        seen = set()
        for ia, ib, g in edge.pairs:
            if (ia, ib) in seen or g in {p[2] for p in edge.pairs if (p[0], p[1]) != (ia, ib)}:
                rep.violations.append(f"edge {e}: duplicate pair ({ia}, {ib}, {g})")
            seen.add((ia, ib))
            for side, loc in ((edge.a, ia), (edge.b, ib)):
                blk = inst.block(side)
                if 0 <= loc < blk.nBin:
                    prev = gid_home.setdefault((side, g), loc)
                    if prev != loc:
                        rep.violations.append(
                            f"gid {g} mapped to two coordinates of block {side}")
                elif blk.nBin <= loc < blk.nBin + blk.nCont:
                    rep.violations.append(
                        f"edge {e}: coupling on non-binary variable (block {side}, index {loc})")
                else:
                    rep.violations.append(f"edge {e}: index {loc} out of range in block {side}")
    if not forest:
        rep.violations.append("edges not a forest")

    # subtree property is only warned about here; structure checks it for decompositions
    holders = {}
    for (side, g) in gid_home:
        holders.setdefault(g, set()).add(side)
    for g, blocks in holders.items():
        adj = {i: set() for i in blocks}
        for edge in inst.edges:
            if g in edge.gids and edge.a in blocks and edge.b in blocks:
                adj[edge.a].add(edge.b)
                adj[edge.b].add(edge.a)
        start = next(iter(blocks))
        seen, stack = {start}, [start]
        while stack:
            u = stack.pop()
            for v in adj[u] - seen:
                seen.add(v)
                stack.append(v)
        if seen != blocks:
            rep.warnings.append(f"gid {g}: blocks holding it are not connected by its edges")
    return rep


@dataclass(frozen=True)
class MonomialFamily:
    perEdge: dict  # edge index -> tuple of frozensets of gids
    k: int

    def subsets(self, e: int) -> tuple:
        return self.perEdge[e]

    def is_down_closed(self) -> bool:
        for fam in self.perEdge.values():
            members = set(fam)
            for S in fam:
                for g in S:
                    sub = S - {g}
                    if sub and sub not in members:
                        return False
        return True


def build_monomial_family(inst: Instance, k: int) -> MonomialFamily:
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    k = int(k)
    per = {}
    for e, edge in enumerate(inst.edges):
        gids = sorted(edge.gids)
        fam = []
        for r in range(1, min(k, len(gids)) + 1):
            fam.extend(frozenset(S) for S in itertools.combinations(gids, r))
        per[e] = tuple(fam)
    return MonomialFamily(per, k)


def _project_rows_onto_match(src: Block, edge: CouplingEdge, dst_id: int, drop_nonmatched: bool):
    """Rows of ``src`` rewritten on ``dst``'s matched coordinates.

    With ``drop_nonmatched`` the terms on unmatched variables are removed; that
    is a valid relaxation for packing data (nonnegative coefficients, zero is
    always a completion).
    """
    src_loc = dict(zip(edge.local(src.id), edge.local(dst_id)))
    out = []
    for r in src.rows:
        if r.ay and not drop_nonmatched:
            continue
        if any(j not in src_loc for j, _ in r.ax) and not drop_nonmatched:
            continue
        ax = tuple(sorted((src_loc[j], v) for j, v in r.ax if j in src_loc))
        if not ax:
            continue
        out.append(Row(ax, (), r.rhs))
    return out


def augment_recourse(inst: Instance, allow_star: bool = False) -> Instance:
    """Copy each block's constraints on the shared binaries into the other block(s).

    For packing instances every row is projected onto the matched coordinates
    (unmatched terms dropped); otherwise only rows whose support is entirely
    matched binaries are copied.  ``allow_star`` extends this to stars whose
    edges all share one coordinate set.
    """
    if len(inst.blocks) != 2 or len(inst.edges) != 1:
        if not allow_star:
            raise ValueError("augment_recourse expects a two-block instance")
    packing = inst.kind == "packing"
    new_rows = {blk.id: list(blk.rows) for blk in inst.blocks}
    for edge in inst.edges:
        for src_id, dst_id in ((edge.a, edge.b), (edge.b, edge.a)):
            src = inst.block(src_id)
            for row in _project_rows_onto_match(src, edge, dst_id, packing):
                if row not in new_rows[dst_id]:
                    new_rows[dst_id].append(row)
    if allow_star and len(inst.edges) > 1:
        # a second pass moves rows picked up by the hub out to every leaf
        changed = True
        while changed:
            changed = False
            for edge in inst.edges:
                for src_id, dst_id in ((edge.a, edge.b), (edge.b, edge.a)):
                    src = Block(src_id, inst.block(src_id).nBin, inst.block(src_id).nCont,
                                inst.block(src_id).c, inst.block(src_id).d,
                                tuple(new_rows[src_id]))
                    for row in _project_rows_onto_match(src, edge, dst_id, packing):
                        if row not in new_rows[dst_id]:
                            new_rows[dst_id].append(row)
                            changed = True
    blocks = tuple(Block(b.id, b.nBin, b.nCont, b.c, b.d, tuple(new_rows[b.id]))
                   for b in inst.blocks)
    return Instance(blocks, inst.edges, dict(inst.meta))


@dataclass(frozen=True)
class InstanceStats:
    phi: float
    nCoupled: int


def instance_stats(inst: Instance) -> InstanceStats:
    """Exhaustive: largest |block objective| over each block's feasible points."""
    from .subsolve import block_objective_range

    phi = 0.0
    for blk in inst.blocks:
        lo, hi = block_objective_range(blk)
        if lo is None:
            continue
        phi = max(phi, abs(lo), abs(hi))
    return InstanceStats(phi, inst.n_coupled)


# ---------------------------------------------------------------- JSON

_BLOCK_KEYS = {"id", "nBin", "nCont", "c", "d", "rows"}
_ROW_KEYS = {"ax", "ay", "rhs"}
_EDGE_KEYS = {"a", "b", "pairs"}
_META_KEYS = {"type"}
_TOP_KEYS = {"blocks", "edges", "meta"}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    extra = set(obj) - allowed
    if extra:
        raise ValueError(f"{where}: unknown field(s) {sorted(extra)}")


def block_to_dict(blk: Block) -> dict:
    return {
        "id": blk.id, "nBin": blk.nBin, "nCont": blk.nCont,
        "c": list(blk.c), "d": list(blk.d),
        "rows": [{"ax": [[j, v] for j, v in r.ax], "ay": [[j, v] for j, v in r.ay], "rhs": r.rhs}
                 for r in blk.rows],
    }


def instance_to_dict(inst: Instance) -> dict:
    return {
        "blocks": [block_to_dict(b) for b in inst.blocks],
        "edges": [{"a": e.a, "b": e.b, "pairs": [list(p) for p in e.pairs]} for e in inst.edges],
        "meta": {"type": inst.kind},
    }


def block_from_dict(d: dict, where="block") -> Block:
    _reject_unknown(d, _BLOCK_KEYS, where)
    rows = []
    for k, r in enumerate(d.get("rows", [])):
        _reject_unknown(r, _ROW_KEYS, f"{where}.rows[{k}]")
        rows.append((r.get("ax", []), r.get("ay", []), r["rhs"]))
    return make_block(d["id"], d["nBin"], d["nCont"], d.get("c", []), d.get("d", []), rows)


def instance_from_dict(d: dict) -> Instance:
    _reject_unknown(d, _TOP_KEYS, "instance")
    blocks = tuple(block_from_dict(b, f"blocks[{k}]") for k, b in enumerate(d["blocks"]))
    edges = []
    for k, e in enumerate(d.get("edges", [])):
        _reject_unknown(e, _EDGE_KEYS, f"edges[{k}]")
        edges.append(CouplingEdge(int(e["a"]), int(e["b"]),
                                  tuple((int(p[0]), int(p[1]), int(p[2])) for p in e["pairs"])))
    meta = d.get("meta", {}) or {}
    _reject_unknown(meta, _META_KEYS, "meta")
    return Instance(blocks, tuple(edges), dict(meta))


def dumps_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, sort_keys=True) + "\n"


def loads_instance(text: str) -> Instance:
    return instance_from_dict(json.loads(text))


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst))


def load_instance(path) -> Instance:
    with open(path) as fh:
        return loads_instance(fh.read())


def two_block(b1: Block, b2: Block, pairs: Iterable, kind="general") -> Instance:
    """Convenience: ``pairs`` are (i1, i2) local index pairs; gids are their positions."""
    pairs = tuple((int(i), int(j), g) for g, (i, j) in enumerate(pairs))
    return Instance((b1, b2), (CouplingEdge(b1.id, b2.id, pairs),), {"type": kind})
