import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import naive_opt
from decompdual import instances
from decompdual.instances import GenConfig, gen_stab
from decompdual.model import dumps_instance, validate_instance
from decompdual.verify import brute_force_opt


def test_star_without_edges():
    # an interval this narrow gives floor(d * 6) = 0 edges per block
    cfg = GenConfig(blocks=2, nodesPerBlock=4, densityRange=(0.01, 0.02), sharedVars=2, seed=5)
    inst = gen_stab(cfg)
    assert all(not b.rows for b in inst.blocks)
    assert brute_force_opt(inst).value == -8
    assert naive_opt(inst) == -8


def test_path_instance():
    inst = gen_stab(GenConfig(blocks=3, nodesPerBlock=6, sharedVars=2, topology="path",
                              densityRange=(0.3, 0.5), seed=2))
    assert validate_instance(inst).ok
    assert math.isfinite(brute_force_opt(inst).value)
    assert [(e.a, e.b) for e in inst.edges] == [(0, 1), (1, 2)]
    # the last two nodes of block b are the first two of block b+1
    assert inst.edges[0].pairs == ((4, 0, 0), (5, 1, 1))


def test_stab_edge_count_and_rows():
    cfg = GenConfig(blocks=1, nodesPerBlock=20, sharedVars=0, seed=11)
    blk = gen_stab(cfg).blocks[0]
    # duplicates collapse, so the count is at most floor(0.15 * 190)
    assert 0 < len(blk.rows) <= math.floor(0.15 * 190)
    for r in blk.rows:
        assert len(r.ax) == 2 and r.rhs == 1.0
    assert set(blk.c) == {-1.0}


def test_determinism():
    cfg = GenConfig(seed=9)
    assert dumps_instance(gen_stab(cfg)) == dumps_instance(gen_stab(cfg))
    assert dumps_instance(gen_stab(cfg)) != dumps_instance(gen_stab(GenConfig(seed=10)))


@pytest.mark.parametrize("bad", [dict(densityRange=(0.0, 0.1)), dict(densityRange=(0.5, 0.4)),
                                 dict(sharedVars=30), dict(topology="ring"),
                                 dict(topology="path", sharedVars=11)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        gen_stab(GenConfig(**bad))


def test_packing_without_rows_is_unconstrained():
    inst = instances.gen_random_packing(2, 3, 0, seed=4)
    # same costs and coupling, constraint matrix zeroed
    free = dataclasses.replace(inst, blocks=tuple(dataclasses.replace(b, rows=()) for b in inst.blocks))
    assert brute_force_opt(free).value == pytest.approx(sum(v for b in free.blocks for v in b.c))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_sign_patterns(seed):
    p = instances.gen_random_packing(3, 4, 1, seed)
    c = instances.gen_random_covering(3, 4, 1, seed)
    assert p.kind == "packing" and c.kind == "covering"
    for b in p.blocks:
        assert np.all(b.cvec <= 0) and np.all(b.dvec <= 0)
        assert np.all(b.Ax >= 0) and np.all(b.Ay >= 0) and np.all(b.b >= 0)
    for b in c.blocks:
        assert np.all(b.cvec >= 0) and np.all(b.dvec >= 0)
        assert np.all(b.Ax <= 0) and np.all(b.Ay <= 0) and np.all(b.b <= 0)
    assert validate_instance(p).ok and validate_instance(c).ok


def test_covering_always_feasible():
    for seed in range(100):
        inst = instances.gen_random_covering(2, 3, 1, seed)
        assert math.isfinite(naive_opt(inst))


def test_canned_metadata_matches_oracle():
    for name in ("three-block-cycle", "appendix-d-packing", "appendix-d-covering",
                 "prop3-epsilon(6, 0.01)", "two-stage(3, 3)", "two-stage(4, 2)"):
        can = instances.canned(name)
        assert brute_force_opt(can.instance).value == pytest.approx(can.known["opt"], abs=1e-12), name


def test_gap_example_tables():
    from decompdual.verify import block_table
    for name in ("appendix-d-packing", "appendix-d-covering"):
        can = instances.canned(name)
        for blk in can.instance.blocks:
            cost, _ = block_table(blk, (0, 1))
            for (a, b), v in can.known["C"][blk.id].items():
                # bit p of the table index is coordinate p
                assert cost[a | (b << 1)] == pytest.approx(v)
    assert instances.canned("appendix-d-packing").known["C"][0][(0, 1)] == -0.75


def test_epsilon_pair_costs():
    inst = instances.canned("prop3-epsilon(5, 0.02)").instance
    assert inst.blocks[0].c == (-0.02,) * 5 and inst.blocks[1].c == (0.02,) * 5
    assert len(inst.edges[0].pairs) == 5


def test_unknown_canned():
    with pytest.raises(KeyError):
        instances.canned("four-block-cycle")
