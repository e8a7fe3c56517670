"""Instance generators (stable-set stars and paths, random packing/covering) and canned examples."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .model import Block, CouplingEdge, Instance, Row, make_block
from .rng import Stream


# ------------------------------------------------------------------ stable-set classes

@dataclass(frozen=True)
class GenConfig:
    blocks: int = 4
    nodesPerBlock: int = 20
    densityRange: tuple = (0.1, 0.15)
    sharedVars: int = 7
    topology: str = "star"
    seed: int = 0

    def validate(self):
        lo, hi = self.densityRange
        if not (0 < lo <= hi < 1):
            raise ValueError("densityRange must satisfy 0 < lo <= hi < 1")
        if self.blocks < 1 or self.nodesPerBlock < 1:
            raise ValueError("need at least one block and one node")
        if self.topology not in ("star", "path"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.sharedVars > self.nodesPerBlock:
            raise ValueError("sharedVars exceeds nodesPerBlock")
        if self.topology == "path" and 2 * self.sharedVars > self.nodesPerBlock:
            raise ValueError("path topology needs 2*sharedVars <= nodesPerBlock")


def _random_graph_rows(s: Stream, n: int, lo: float, hi: float):
    d = s.uniform(lo, hi)
    npairs = n * (n - 1) // 2
    m = math.floor(d * npairs)
    pairs = set()
    for _ in range(m):
        k = s.below(npairs)
        # unrank k into the pair (u, v), u < v, in row-major order
        u = 0
        while k >= n - 1 - u:
            k -= n - 1 - u
            u += 1
        pairs.add((u, u + 1 + k))
    return [Row(((u, 1.0), (v, 1.0)), (), 1.0) for u, v in sorted(pairs)]


def gen_stab(cfg: GenConfig) -> Instance:
    """Maximum stable set per block (minimise -sum x), coupled by star or path copies."""
    cfg.validate()
    s = Stream(cfg.seed)
    n, k = cfg.nodesPerBlock, cfg.sharedVars
    blocks = []
    for b in range(cfg.blocks):
        rows = _random_graph_rows(s, n, *cfg.densityRange)
        blocks.append(Block(b, n, 0, tuple([-1.0] * n), (), tuple(rows)))
    edges = []
    if cfg.topology == "star":
        for b in range(1, cfg.blocks):
            edges.append(CouplingEdge(0, b, tuple((j, j, j) for j in range(k))))
    else:
        for b in range(cfg.blocks - 1):
            edges.append(CouplingEdge(b, b + 1, tuple((n - k + j, j, b * k + j) for j in range(k))))
    return Instance(tuple(blocks), tuple(edges), {"type": "packing"})


# ------------------------------------------------------------------ random packing / covering / mixed

def _coupling(nBlocks, n):
    """Two blocks share one edge; more blocks form a star around block 0."""
    return tuple(CouplingEdge(0, b, tuple((j, j, j) for j in range(n))) for b in range(1, nBlocks))


def _r(v):
    return round(v, 3)


def gen_random_packing(nBlocks: int, nBin: int, nCont: int, seed: int, nLocal: int = 1,
                       density: float = 0.6, nRows: int | None = None) -> Instance:
    """Costs <= 0, constraint data >= 0.  The first ``nBin - nLocal`` binaries are shared."""
    n = nBin - nLocal
    if n < 1:
        raise ValueError("need at least one shared binary")
    s = Stream(seed)
    nRows = nRows or max(2, nBin // 2 + 1)
    blocks = []
    for b in range(nBlocks):
        c = [_r(-s.uniform(0.1, 1.0)) for _ in range(nBin)]
        d = [_r(-s.uniform(0.1, 1.0)) for _ in range(nCont)]
        rows = []
        for r in range(nRows):
            ax = [(j, _r(s.uniform(0.2, 1.0))) for j in range(nBin) if s.uniform() < density]
            ay = [(j, _r(s.uniform(0.2, 1.0))) for j in range(nCont) if s.uniform() < density]
            if not ax and not ay:
                ax = [(s.below(nBin), 1.0)]
            tot = sum(v for _, v in ax) + sum(v for _, v in ay)
            rows.append((ax, ay, _r(s.uniform(0.3, 0.8) * tot)))
        # every continuous column needs a positive coefficient to stay bounded
        for j in range(nCont):
            if not any(any(i == j for i, _ in r[1]) for r in rows):
                rows.append(([], [(j, 1.0)], _r(s.uniform(0.5, 1.5))))
        blocks.append(make_block(b, nBin, nCont, c, d, rows))
    return Instance(tuple(blocks), _coupling(nBlocks, n), {"type": "packing"})


def gen_random_covering(nBlocks: int, nBin: int, nCont: int, seed: int, nLocal: int = 1,
                        density: float = 0.6, nRows: int | None = None) -> Instance:
    """Costs >= 0, constraint data <= 0 (rows a.x + b.y >= r); the all-ones point is feasible."""
    n = nBin - nLocal
    if n < 1:
        raise ValueError("need at least one shared binary")
    s = Stream(seed)
    nRows = nRows or max(2, nBin // 2 + 1)
    blocks = []
    for b in range(nBlocks):
        c = [_r(s.uniform(0.1, 1.0)) for _ in range(nBin)]
        d = [_r(s.uniform(0.1, 1.0)) for _ in range(nCont)]
        rows = []
        for r in range(nRows):
            ax = [(j, _r(s.uniform(0.2, 1.0))) for j in range(nBin) if s.uniform() < density]
            ay = [(j, _r(s.uniform(0.2, 1.0))) for j in range(nCont) if s.uniform() < density]
            if not ax and not ay:
                ax = [(s.below(nBin), 1.0)]
            tot = sum(v for _, v in ax) + sum(v for _, v in ay)
            req = _r(s.uniform(0.3, 0.9) * tot)
            rows.append(([(j, -v) for j, v in ax], [(j, -v) for j, v in ay], -req))
        blocks.append(make_block(b, nBin, nCont, c, d, rows))
    return Instance(tuple(blocks), _coupling(nBlocks, n), {"type": "covering"})


def gen_random_mixed(nBlocks: int, n: int, nLocal: int, nCont: int, seed: int,
                     nRows: int = 3, density: float = 0.7) -> Instance:
    """Mixed-sign data around a hidden feasible point; every y is capped at 2."""
    s = Stream(seed)
    nBin = n + nLocal
    x_shared = [s.below(2) for _ in range(n)]
    blocks = []
    for b in range(nBlocks):
        x0 = x_shared + [s.below(2) for _ in range(nLocal)]
        y0 = [s.uniform(0.0, 1.0) for _ in range(nCont)]
        c = [_r(s.uniform(-1.0, 1.0)) for _ in range(nBin)]
        d = [_r(s.uniform(-1.0, 1.0)) for _ in range(nCont)]
        rows = []
        for r in range(nRows):
            ax = [(j, _r(s.uniform(-1.0, 1.0))) for j in range(nBin) if s.uniform() < density]
            ay = [(j, _r(s.uniform(-1.0, 1.0))) for j in range(nCont) if s.uniform() < density]
            act = sum(v * x0[j] for j, v in ax) + sum(v * y0[j] for j, v in ay)
            rows.append((ax, ay, _r(act + s.uniform(0.05, 0.5))))
        for j in range(nCont):
            rows.append(([], [(j, 1.0)], 2.0))
        blocks.append(make_block(b, nBin, nCont, c, d, rows))
    return Instance(tuple(blocks), _coupling(nBlocks, n), {"type": "general"})


# ------------------------------------------------------------------ canned

@dataclass
class Canned:
    instance: Instance
    known: dict = field(default_factory=dict)


def three_block_cycle() -> Canned:
    """Three blocks, each pricing one product of two binaries, linked in a cycle.

    Block 0 pays x0*x1, block 1 pays (1-x0)*x1, block 2 pays (1-x0)*(1-x1);
    the links are b0.x0 = b1.x0, b0.x1 = b2.x0, b1.x1 = b2.x1.  A continuous
    t >= 0 carries each product through its lower linearisation.
    """
    b0 = make_block(0, 2, 1, [0, 0], [1], [({0: 1, 1: 1}, {0: -1}, 1)])
    b1 = make_block(1, 2, 1, [0, 0], [1], [({0: -1, 1: 1}, {0: -1}, 0)])
    b2 = make_block(2, 2, 1, [0, 0], [1], [({0: -1, 1: -1}, {0: -1}, -1)])
    edges = (CouplingEdge(0, 1, ((0, 0, 0),)), CouplingEdge(0, 2, ((1, 0, 1),)),
             CouplingEdge(1, 2, ((1, 1, 2),)))
    inst = Instance((b0, b1, b2), edges, {"type": "general"})
    # p=0, q=1, r=0 makes every product vanish
    return Canned(inst, {"opt": 0.0, "classicalDual": 0.0})


def gap_example_packing() -> Canned:
    """Two packing blocks over (x1, x2, y) with y an uncoupled binary."""
    b0 = make_block(0, 3, 0, [-0.25, -0.25, -0.5], [], [({0: 1, 1: 1, 2: 1}, {}, 2)])
    b1 = make_block(1, 3, 0, [-0.25, -0.25, -0.5], [], [({0: 1, 1: 1, 2: 2}, {}, 2)])
    inst = Instance((b0, b1), (CouplingEdge(0, 1, ((0, 0, 0), (1, 1, 1))),), {"type": "packing"})
    table = {0: {(0, 0): -0.5, (0, 1): -0.75, (1, 0): -0.75, (1, 1): -0.5},
             1: {(0, 0): -0.5, (0, 1): -0.25, (1, 0): -0.25, (1, 1): -0.5}}
    return Canned(inst, {"opt": -1.0, "dualM1Upper": -1.25, "C": table})


def gap_example_covering() -> Canned:
    """Covering twin of the packing example; rows are stored as negated <= rows."""
    b0 = make_block(0, 3, 0, [0.25, 0.25, 0.0], [], [({0: -1, 1: -1, 2: -1}, {}, -2)])
    b1 = make_block(1, 3, 0, [0.25, 0.25, 0.5], [], [({0: -1, 1: -1, 2: -2}, {}, -2)])
    inst = Instance((b0, b1), (CouplingEdge(0, 1, ((0, 0, 0), (1, 1, 1))),), {"type": "covering"})
    table = {0: {(0, 0): math.inf, (0, 1): 0.25, (1, 0): 0.25, (1, 1): 0.5},
             1: {(0, 0): 0.5, (0, 1): 0.75, (1, 0): 0.75, (1, 1): 0.5}}
    return Canned(inst, {"opt": 1.0, "dualM1Upper": 0.75, "C": table})


def epsilon_pair(n: int = 8, eps: float = 0.01) -> Canned:
    """min -eps*sum(x) + eps*sum(x'), x = x' in {0,1}^n, no other rows."""
    b0 = Block(0, n, 0, tuple([-eps] * n), (), ())
    b1 = Block(1, n, 0, tuple([eps] * n), (), ())
    inst = Instance((b0, b1), (CouplingEdge(0, 1, tuple((j, j, j) for j in range(n))),),
                    {"type": "general"})
    return Canned(inst, {"opt": 0.0, "optimalLambda": eps, "n": n, "eps": eps})


def two_stage(Z: int = 3, n: int = 3) -> Canned:
    """Z packing scenarios sharing n binaries; scenario i owns one binary y_i.

    Scenario i: min -sum x - (m_i + 0.5) y_i  s.t.  sum x + m_i y_i <= n,
    with m_i = 1 + i mod n.  Every scenario sees the same s = sum x, so OPT is
    a one-dimensional minimisation over s.
    """
    blocks = []
    for i in range(Z):
        m = 1 + i % n
        rows = [({**{j: 1 for j in range(n)}, n: m}, {}, n)]
        blocks.append(make_block(i, n + 1, 0, [-1.0] * n + [-(m + 0.5)], [], rows))
    edges = tuple(CouplingEdge(0, i, tuple((j, j, j) for j in range(n))) for i in range(1, Z))
    inst = Instance(tuple(blocks), edges, {"type": "packing"})
    best = math.inf
    for s_ in range(n + 1):
        tot = sum(-s_ - ((1 + i % n) + 0.5) * (s_ <= n - (1 + i % n)) for i in range(Z))
        best = min(best, tot)
    return Canned(inst, {"opt": float(best), "Z": Z, "n": n})


_CANNED = {
    "three-block-cycle": three_block_cycle,
    "appendix-d-packing": gap_example_packing,
    "appendix-d-covering": gap_example_covering,
    "prop3-epsilon": epsilon_pair,
    "two-stage": two_stage,
}

CANNED_NAMES = tuple(_CANNED)


def canned(name: str) -> Canned:
    """Look up a canned example; parameters go in parentheses, e.g. ``prop3-epsilon(6, 0.01)``."""
    m = re.fullmatch(r"\s*([a-z0-9-]+)\s*(?:\((.*)\))?\s*", name)
    if not m or m.group(1) not in _CANNED:
        raise KeyError(f"unknown canned instance {name!r}; choose from {', '.join(CANNED_NAMES)}")
    args, kwargs = [], {}
    if m.group(2):
        for part in m.group(2).split(","):
            part = part.strip()
            if not part:
                continue
            if "=" in part:
                k, v = part.split("=", 1)
                kwargs[k.strip()] = _num(v.strip())
            else:
                args.append(_num(part))
    return _CANNED[m.group(1)](*args, **kwargs)


def _num(text):
    try:
        return int(text)
    except ValueError:
        return float(text)
