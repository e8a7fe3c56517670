import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import prox_qp_kkt_enum
from decompdual import instances
from decompdual.duals import DualObjective
from decompdual.optimize import (Cut, FixedStep, Polyak, level_bundle_maximize, model_lower_bound,
                                 proximal_bundle_maximize, read_trace, solve_master_qp,
                                 subgradient_maximize, write_trace)
from decompdual.verify import brute_force_opt, dual_oracle_hull_lp

K = ("l", 0, 0)


def kink(point):
    x = point.get(K, 0.0)
    return -abs(x), {K: -1.0 if x > 0 else (1.0 if x < 0 else 0.0)}, None


def test_polyak_on_kink():
    st_ = subgradient_maximize(kink, Polyak(0.0), 100, start={K: 1.0})
    assert st_.bestValue == pytest.approx(0.0, abs=1e-6)


def test_zero_subgradient_stops():
    st_ = subgradient_maximize(kink, FixedStep(0.1), 50, start={K: 0.0})
    assert st_.status == "zero-subgradient" and st_.evaluations == 1


@pytest.mark.parametrize("maximize", [proximal_bundle_maximize, level_bundle_maximize])
def test_bundle_on_kink(maximize):
    st_ = maximize(kink, 20, 1.0, start={K: 1.0})
    # the model bound on max L is the quantity reported as LB of f
    assert st_.modelBound == pytest.approx(0.0, abs=1e-8)
    assert st_.evaluations <= 20


def test_prox_fixed_point_on_tangent_cut():
    cut = Cut({K: 0.0}, 0.0, {K: 0.0})
    sol = solve_master_qp([cut], {K: 0.0}, "prox", alpha=1.0, lb=0.0)
    assert sol.point.get(K, 0.0) == pytest.approx(0.0)


def test_master_trivial_cases():
    sol = solve_master_qp([], {K: 0.5}, "prox", alpha=1.0, lb=-3.0)
    assert sol.point[K] == pytest.approx(0.5) and sol.t == pytest.approx(-3.0)
    cuts = [Cut({K: 0.0}, 0.0, {K: 1.0}), Cut({K: 0.0}, 0.0, {K: -1.0})]
    sol = solve_master_qp(cuts, {K: 0.0}, "prox", alpha=1.0, lb=-10.0)
    assert sol.point.get(K, 0.0) == pytest.approx(0.0, abs=1e-10)


def test_level_on_linear_function():
    lin = lambda p: (p.get(K, 0.0), {K: 1.0}, None)  # noqa: E731
    st_ = level_bundle_maximize(lin, 3, 5.0, start={K: 0.0})
    # f = -lam: UB 0 at the start, floor -5, level 0.3 * -5 = -1.5, reached at lam = 1.5
    assert st_.trace[1]["value"] == pytest.approx(1.5, abs=1e-9)


@pytest.mark.parametrize("seed", range(15))
def test_master_matches_kkt_enumeration(seed):
    rng = np.random.default_rng(seed)
    keys = [("l", 0, p) for p in range(3)]
    G = rng.normal(size=(5, 3))
    pts = rng.normal(size=(5, 3))
    vals = rng.normal(size=5)
    center = rng.normal(size=3)
    alpha = float(rng.uniform(0.2, 3.0))
    lb = float(vals.min() - 3.0)
    cuts = [Cut(dict(zip(keys, pts[j])), float(vals[j]), dict(zip(keys, G[j]))) for j in range(5)]
    sol = solve_master_qp(cuts, dict(zip(keys, center)), "prox", alpha=alpha, lb=lb)
    ref = prox_qp_kkt_enum(G, pts, vals, center, alpha, lb)
    got = np.array([sol.point.get(k, 0.0) for k in keys])
    assert np.allclose(got, ref[:3], atol=1e-8)
    assert sol.t == pytest.approx(ref[3], abs=1e-8)
    assert max(sol.residuals.values()) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(0.5, 3))
def test_piecewise_linear_analytic_max(c1, c2, vstar, w):
    k1, k2 = ("l", 0, 0), ("l", 0, 1)

    def f(p):
        a, b = p.get(k1, 0.0) - c1, p.get(k2, 0.0) - c2
        # L = v* - w*max(|a|, |b|) - |a + b|, maximised at (c1, c2)
        if abs(a) >= abs(b):
            g1, g2 = -w * math.copysign(1, a) if a else 0.0, 0.0
        else:
            g1, g2 = 0.0, -w * math.copysign(1, b)
        s = -math.copysign(1, a + b) if a + b else 0.0
        return vstar - w * max(abs(a), abs(b)) - abs(a + b), {k1: g1 + s, k2: g2 + s}, None

    st_ = subgradient_maximize(f, Polyak(vstar), 500)
    assert st_.bestValue == pytest.approx(vstar, abs=1e-5)
    # the bundle's cut model certifies the same maximum
    st_ = proximal_bundle_maximize(f, 60, vstar + 10.0)
    assert st_.modelBound == pytest.approx(vstar, abs=1e-6)
    assert st_.bestValue <= vstar + 1e-12


def test_epsilon_pair_fixed_step_reaches_eps():
    can = instances.canned("prop3-epsilon")
    n, eps = can.known["n"], can.known["eps"]
    obj = DualObjective(can.instance, "v", scale=1.0)
    st_ = subgradient_maximize(obj, FixedStep(eps / (n + 2)), n * n * (n + 2))
    assert can.known["opt"] - st_.bestValue <= eps


@pytest.mark.parametrize("method", ["l", "v"])
def test_model_validity_and_bounds(method):
    inst = instances.gen_random_mixed(2, 3, 1, 1, 7)
    obj = DualObjective(inst, method, scale=1.0)
    opt = brute_force_opt(inst).value
    st_ = proximal_bundle_maximize(obj, 30, opt)
    rng = np.random.default_rng(0)
    keys = sorted({k for c in st_.cuts for k in c.subgrad} | {k for c in st_.cuts for k in c.point}, key=str)
    for _ in range(100):
        p = {k: float(rng.normal(scale=2)) for k in keys}
        model = max(c.at(p) for c in st_.cuts)
        assert model <= -obj(p)[0] + 1e-9
    if method == "l":
        assert st_.modelBound >= dual_oracle_hull_lp(inst, "classical") - 1e-7
    lbs = [r["lb"] for r in st_.trace]
    ubs = [r["ub"] for r in st_.trace]
    assert lbs == sorted(lbs)
    assert all(b <= a + 1e-12 for a, b in zip(ubs, ubs[1:]))


def test_model_lower_bound_floor():
    assert model_lower_bound([], -4.0) == pytest.approx(-4.0)
    cuts = [Cut({K: 0.0}, 1.0, {K: 1.0}), Cut({K: 0.0}, 1.0, {K: -1.0})]
    assert model_lower_bound(cuts, -4.0) == pytest.approx(1.0)


def test_warm_start_never_lowers_first_value():
    inst = instances.gen_random_mixed(2, 3, 1, 1, 9)
    opt = brute_force_opt(inst).value
    cl = DualObjective(inst, "l")
    warm = proximal_bundle_maximize(cl, 15, opt)
    base = cl(warm.bestPoint)[0]
    for method in ("m", "v"):
        st_ = proximal_bundle_maximize(DualObjective(inst, method, k=2), 5, opt, start=dict(warm.bestPoint))
        assert st_.firstValue >= base - 1e-12


def test_trace_roundtrip(tmp_path):
    st_ = proximal_bundle_maximize(kink, 5, 1.0, start={K: 1.0})
    path = tmp_path / "t.csv"
    write_trace(path, st_.trace, include_time=False)
    rows = read_trace(path)
    assert [r["value"] for r in rows] == [r["value"] for r in st_.trace]
    path.write_text(path.read_text() + "1,2\n")
    with pytest.raises(ValueError, match="row"):
        read_trace(path)
