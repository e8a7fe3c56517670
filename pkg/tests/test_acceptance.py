"""Acceptance criteria 1-10, one summary line each (see the "acceptance criteria" section of the run)."""
import math
import time

import numpy as np
import pytest

from _oracles import lp_vertex_enum, naive_opt, prox_qp_kkt_enum
from decompdual import instances
from decompdual.cli import solve_instance
from decompdual.duals import DualObjective, run_sda
from decompdual.model import augment_recourse, build_monomial_family
from decompdual.optimize import (Cut, FixedStep, level_bundle_maximize, proximal_bundle_maximize,
                                 solve_master_qp, subgradient_maximize)
from decompdual.subsolve import LPProblem, solve_lp
from decompdual.verify import (brute_force_opt, check_affine_redundancy, check_bounds,
                               compute_eta_theta, dual_oracle_hull_lp, two_stage_closed_form,
                               two_stage_layout)

# tolerances pinned by the criteria
TOL_EXACT = 1e-7
TOL_CYCLE = 1e-6
TOL_REACH = 1e-4
TOL_LP = 1e-9
TOL_QP = 1e-8
TOL_AFFINE = 1e-6
TOL_CLOSED_FORM = 1e-9


def _log(log, num, ok, detail):
    line = f"criterion {num:02d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    log.append(line)
    assert ok, line


# ---------------------------------------------------------------- shared suite (criteria 2, 3, 4, 6)

def _suite():
    out = []
    for i in range(50):
        n, nc = 2 + i % 3, 1 + i % 2
        out.append(("two-block", n, instances.gen_random_mixed(2, n, 1, nc, 1000 + i)))
    for i in range(20):
        n, nc = 2 + i % 2, 1 + i % 2
        out.append(("star", n, instances.gen_random_mixed(3, n, 1, nc, 2000 + i)))
    return [(kind, n, inst, brute_force_opt(inst).value) for kind, n, inst in out]


@pytest.fixture(scope="module")
def suite():
    return _suite()


class _Recorder:
    """Wraps a dual objective and keeps every evaluation's subgradient and point."""

    def __init__(self, obj):
        self.obj = obj
        self.points = []
        self.grads = []

    def __call__(self, point):
        L, g, res = self.obj(point)
        self.points.append(dict(point))
        self.grads.append(g)
        return L, g, res


@pytest.fixture(scope="module")
def bundle_runs(suite):
    """Level bundle on V (scale 1) and prox bundle on the full M-dual for every suite instance."""
    runs = []
    for kind, n, inst, opt in suite:
        rv = _Recorder(DualObjective(inst, "v", scale=1.0))
        budget = 500 if kind == "two-block" else 100
        sv = level_bundle_maximize(rv, budget, opt)
        entry = {"kind": kind, "n": n, "inst": inst, "opt": opt, "v": (sv, rv)}
        if kind == "two-block":
            rm = _Recorder(DualObjective(inst, "m", k=n))
            entry["m"] = (proximal_bundle_maximize(rm, 500, opt), rm)
        runs.append(entry)
    return runs


# ---------------------------------------------------------------- 1

def test_criterion_01_canned_values(acceptance_log):
    t0 = time.perf_counter()
    notes, ok = [], True
    cyc = instances.canned("three-block-cycle").instance
    cyc_opt = brute_force_opt(cyc).value
    if abs(cyc_opt - 1.0) > TOL_CYCLE:
        ok = False
        notes.append(f"cycle OPT={cyc_opt:g} (expected 1)")
    st = proximal_bundle_maximize(DualObjective(cyc, "l"), 200, cyc_opt)
    if abs(st.bestValue) > TOL_CYCLE:
        ok = False
    notes.append(f"cycle L*={st.bestValue:.2e}")
    for name, opt, bound in (("appendix-d-packing", -1.0, -1.25), ("appendix-d-covering", 1.0, 0.75)):
        inst = instances.canned(name).instance
        o = brute_force_opt(inst).value
        m1 = dual_oracle_hull_lp(inst, build_monomial_family(inst, 1))
        ok &= abs(o - opt) <= TOL_EXACT and m1 <= bound + TOL_EXACT
        notes.append(f"{name.split('-')[-1]} OPT={o:g} M1={m1:g}")
    secs = time.perf_counter() - t0
    ok &= secs < 5.0
    _log(acceptance_log, 1, ok, "; ".join(notes) + f"; {secs:.2f}s")


# ---------------------------------------------------------------- 2

def test_criterion_02_strong_duality(acceptance_log):
    t0 = time.perf_counter()
    data = _suite()
    worst_v = worst_full = 0.0
    for kind, n, inst, opt in data:
        worst_v = max(worst_v, abs(dual_oracle_hull_lp(inst, "vertices") - opt))
        worst_full = max(worst_full, abs(dual_oracle_hull_lp(inst, "full") - opt))
    secs = time.perf_counter() - t0
    ok = worst_v <= TOL_EXACT and worst_full <= TOL_EXACT and secs < 120
    _log(acceptance_log, 2, ok, f"{len(data)} instances; max|V-OPT|={worst_v:.1e} "
         f"max|Mfull-OPT|={worst_full:.1e}; {secs:.1f}s")


# ---------------------------------------------------------------- 3

def test_criterion_03_hierarchy(acceptance_log, suite):
    bad, worst = 0, 0.0
    for kind, n, inst, opt in suite:
        vals = [dual_oracle_hull_lp(inst, build_monomial_family(inst, k)) for k in range(1, n + 1)]
        drops = [a - b for a, b in zip(vals, vals[1:])]
        worst = max([worst] + drops)
        bad += any(d > TOL_EXACT for d in drops)
    _log(acceptance_log, 3, bad == 0, f"{len(suite)} instances; violations={bad}; largest drop={worst:.1e}")


# ---------------------------------------------------------------- 4

def test_criterion_04_optimizers_reach_oracle(acceptance_log, bundle_runs):
    two = [r for r in bundle_runs if r["kind"] == "two-block"]
    miss_v = miss_m = 0
    gv = gm = 0.0
    for r in two:
        sv, rv = r["v"]
        sm, rm = r["m"]
        dv, dm = r["opt"] - sv.bestValue, r["opt"] - sm.bestValue
        gv, gm = max(gv, dv), max(gm, dm)
        miss_v += dv > TOL_REACH or sv.evaluations > 500
        miss_m += dm > TOL_REACH or sm.evaluations > 500
    ok = miss_v == 0 and miss_m == 0
    _log(acceptance_log, 4, ok, f"{len(two)} two-block; level/V worst gap={gv:.1e} misses={miss_v}; "
         f"prox/M(k=n) worst gap={gm:.1e} misses={miss_m}")


# ---------------------------------------------------------------- 5

def test_criterion_05_epsilon_pair(acceptance_log):
    can = instances.canned("prop3-epsilon(8, 0.01)")
    n, eps = can.known["n"], can.known["eps"]
    need = 2 ** (n - 3)
    sda = run_sda(can.instance, "lambdaFixedZero", budget=need)
    sda_gaps = [ub - lb for _, lb, ub, _ in sda.history]
    sda_ok = sda.iterations >= need and all(g >= 2 * eps - 1e-9 for g in sda_gaps)
    budget = n * n * (n + 2)
    obj = DualObjective(can.instance, "v", scale=1.0)
    st = subgradient_maximize(obj, FixedStep(eps / (n + 2)), budget)
    sub_gap = can.known["opt"] - st.bestValue
    hit = next((i + 1 for i, row in enumerate(st.trace) if can.known["opt"] - row["lb"] <= eps), None)
    ok = sda_ok and sub_gap <= eps
    _log(acceptance_log, 5, ok, f"SDA {sda.iterations} iters, min gap={min(sda_gaps):.4f} (>= {2 * eps}); "
         f"subgradient gap={sub_gap:.2e} first <= eps at eval {hit} of {budget}")


# ---------------------------------------------------------------- 6

def _per_edge(g, inst):
    by_edge = {}
    for key, v in g.items():
        by_edge.setdefault(key[1], []).append((key, v))
    return by_edge


def test_criterion_06_subgradient_structure(acceptance_log, bundle_runs):
    evals = norm_bad = growth_bad = 0
    worst_ratio = 0.0
    max_growth = 0
    for r in bundle_runs:
        inst, n = r["inst"], r["n"]
        _, rec = r["v"]
        seen = {e: set() for e in range(len(inst.edges))}
        for point, g in zip(rec.points, rec.grads):
            evals += 1
            for e, items in _per_edge(g, inst).items():
                n2 = sum(v * v for _, v in items)
                worst_ratio = max(worst_ratio, n2 / (n + 2))
                norm_bad += n2 > n + 2 + 1e-12
            for e in seen:
                new = {k for k in g if k[0] == "v" and k[1] == e} - seen[e]
                max_growth = max(max_growth, len(new))
                growth_bad += len(new) > 2
                seen[e] |= new
            # the iterate's mu support never leaves the accumulated cut support
            support = {k for k, v in point.items() if k[0] == "v" and v != 0.0}
            growth_bad += not support <= set().union(*seen.values())
    ok = norm_bad == 0 and growth_bad == 0
    _log(acceptance_log, 6, ok, f"{evals} V evaluations; max ||g||^2/(n+2)={worst_ratio:.3f}; "
         f"max mu-support growth per iteration={max_growth}")


# ---------------------------------------------------------------- 7

def _bound_instances():
    out = []
    for i in range(100):
        star = i >= 50
        blocks, nbin = (3, 4) if star else (2, 5)
        p = instances.gen_random_packing(blocks, nbin, 1, 3000 + i, nLocal=1)
        out.append(augment_recourse(p, allow_star=star))
        out.append(instances.gen_random_covering(blocks, nbin, 1, 4000 + i, nLocal=1))
    return out


def test_criterion_07_bound_certificates(acceptance_log):
    certs = fails = 0
    worst_margin = math.inf
    for inst in _bound_instances():
        opt = brute_force_opt(inst).value
        n = max(len(e.pairs) for e in inst.edges)
        for k in sorted({1, max(1, n // 2), n}):
            dual = dual_oracle_hull_lp(inst, build_monomial_family(inst, k))
            cert = check_bounds(inst, k, dual, opt)
            certs += 1
            fails += not cert.passed
            worst_margin = min(worst_margin, dual - cert.bound * opt)
    cor_err = 0.0
    for Z in (2, 3, 4):
        for n in (2, 3, 4):
            td = two_stage_layout(Z, n)
            for k in range(1, n + 1):
                eta, theta = compute_eta_theta(td, k)
                ceta, ctheta, _ = two_stage_closed_form(Z, k / n)
                cor_err = max(cor_err, abs(eta - ceta), abs(theta - ctheta))
    ok = fails == 0 and cor_err <= TOL_CLOSED_FORM
    _log(acceptance_log, 7, ok, f"{certs} certificates, violations={fails}, min slack={worst_margin:.2e}; "
         f"closed form vs LP max err={cor_err:.1e}")


# ---------------------------------------------------------------- 8

def _gaps(inst, runs):
    out = {}
    for label, method, k, opt_name in runs:
        rep, _ = solve_instance(inst, method, k=k, optimizer=opt_name, budget=200, warmstart=True,
                                exact_primal=True)
        out[label] = rep["gap"]
    return out


def test_criterion_08_table_ordering(acceptance_log):
    t0 = time.perf_counter()
    star_ql = star_vl = path_ql = 0
    detail = []
    for seed in range(10):
        star = instances.gen_stab(instances.GenConfig(4, 20, (0.1, 0.15), 7, "star", seed))
        g = _gaps(star, [("L", "l", None, "prox"), ("QL", "m", 2, "prox"), ("VL", "v", None, "level")])
        star_ql += g["QL"] <= g["L"]
        star_vl += g["VL"] <= g["L"]
        path = instances.gen_stab(instances.GenConfig(4, 20, (0.1, 0.15), 7, "path", seed))
        h = _gaps(path, [("L", "l", None, "prox"), ("QL", "m", 2, "prox")])
        path_ql += h["QL"] <= h["L"]
        detail.append(f"{g['L']:.3f}/{g['QL']:.3f}/{g['VL']:.3f}|{h['L']:.3f}/{h['QL']:.3f}")
    secs = time.perf_counter() - t0
    print("per-seed gaps star L/QL/VL | path L/QL:", " ".join(detail))
    ok = star_ql >= 8 and star_vl >= 8 and path_ql >= 8 and secs < 600
    _log(acceptance_log, 8, ok, f"star QL<=L {star_ql}/10, VL<=L {star_vl}/10; path QL<=L {path_ql}/10; "
         f"{secs:.0f}s")


# ---------------------------------------------------------------- 9

def _random_iterate(inst, rng, method, fam):
    pt = {}
    for e, edge in enumerate(inst.edges):
        for p in range(len(edge.pairs)):
            pt[("l", e, p)] = float(rng.normal(scale=1.5))
        if method == "m":
            for S in fam.perEdge[e]:
                if len(S) > 1 and rng.uniform() < 0.6:
                    pt[("m", e, tuple(sorted(S)))] = float(rng.normal(scale=1.5))
        elif method == "v":
            size = int(rng.integers(0, 4))
            for key in rng.choice(1 << len(edge.pairs), size=min(size, 1 << len(edge.pairs)),
                                  replace=False):
                pt[("v", e, int(key))] = float(rng.normal(scale=1.5))
    return pt


def test_criterion_09_weak_duality_fuzz(acceptance_log, suite, bundle_runs):
    rng = np.random.default_rng(9)
    methods = ("l", "m", "v")
    worst = -math.inf
    bad = 0
    count = 0
    picks = suite[::7]  # ten instances, both shapes
    per = 1000 // (len(picks) * len(methods)) + 1
    for kind, n, inst, _ in picks:
        opt = naive_opt(inst)
        fam = build_monomial_family(inst, n)
        for method in methods:
            obj = DualObjective(inst, method, fam=fam if method == "m" else None, scale=2.0)
            for _ in range(per):
                L, _, _ = obj(_random_iterate(inst, rng, method, fam))
                count += 1
                worst = max(worst, L - opt)
                bad += L > opt + TOL_EXACT
    mono_bad = 0
    nruns = 0
    for r in bundle_runs:
        for tag in ("v", "m"):
            if tag not in r:
                continue
            st = r[tag][0]
            nruns += 1
            lbs = [row["lb"] for row in st.trace]
            ubs = [row["ub"] for row in st.trace]
            mono_bad += any(b < a for a, b in zip(lbs, lbs[1:]))
            mono_bad += any(b > a for a, b in zip(ubs, ubs[1:]))
    ok = count >= 1000 and bad == 0 and mono_bad == 0
    _log(acceptance_log, 9, ok, f"{count} iterates, max(L-OPT)={worst:.2e}, violations={bad}; "
         f"{nruns} bundle runs, monotonicity breaks={mono_bad}")


# ---------------------------------------------------------------- 10

def test_criterion_10_numeric_kernels(acceptance_log):
    rng = np.random.default_rng(10)
    lp_err = 0.0
    for _ in range(200):
        A = np.vstack([rng.normal(size=(5, 8)), np.ones(8)])
        b = np.append(rng.uniform(0.5, 2.0, size=5), 3.0)
        c = rng.normal(size=8)
        s = solve_lp(LPProblem.make(c, A, b))
        lp_err = max(lp_err, abs(s.value - lp_vertex_enum(c, A, b)))
    qp_err = 0.0
    keys = [("l", 0, p) for p in range(3)]
    for _ in range(100):
        G, pts, vals = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=5)
        center, alpha = rng.normal(size=3), float(rng.uniform(0.2, 3.0))
        lb = float(vals.min() - 3.0)
        cuts = [Cut(dict(zip(keys, pts[j])), float(vals[j]), dict(zip(keys, G[j]))) for j in range(5)]
        sol = solve_master_qp(cuts, dict(zip(keys, center)), "prox", alpha=alpha, lb=lb)
        ref = prox_qp_kkt_enum(G, pts, vals, center, alpha, lb)
        got = np.array([sol.point.get(k, 0.0) for k in keys] + [sol.t])
        qp_err = max(qp_err, float(np.abs(got - ref).max()))
    aff_err = 0.0
    for i in range(50):
        inst = instances.gen_random_mixed(2, 2 + i % 3, 1, 1 + i % 2, 5000 + i)
        chk = check_affine_redundancy(inst, TOL_AFFINE)
        aff_err = max(aff_err, abs(chk.with_affine - chk.classical))
    ok = lp_err <= TOL_LP and qp_err <= TOL_QP and aff_err <= TOL_AFFINE
    _log(acceptance_log, 10, ok, f"LP max err={lp_err:.1e} (200); QP max err={qp_err:.1e} (100); "
         f"affine max shift={aff_err:.1e} (50)")
