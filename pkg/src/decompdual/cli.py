"""Command line driver: generate, decompose, solve, verify, report.

Exit codes: 0 ok, 2 usage error, 3 infeasible, 4 budget exhausted with a gap left.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

from . import duals, instances, optimize, structure, verify
from .model import (build_monomial_family, dumps_instance, load_instance, save_instance,
                    validate_instance)

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 2, 3, 4
GAP_TOL = 1e-6


class UsageError(Exception):
    pass


def gap_of(primal: float, dual: float) -> float:
    """(primal - dual) / max(1, |primal|); safe for negative objectives."""
    if not (math.isfinite(primal) and math.isfinite(dual)):
        return math.inf
    return (primal - dual) / max(1.0, abs(primal))


def _seed(args) -> int:
    env = os.environ.get("DECOMPDUAL_SEED")
    if env is not None and env.strip() != "":
        return int(env)
    return int(args.seed)


def _dump(obj, path=None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _finite(v):
    return v if (isinstance(v, float) and math.isfinite(v)) or isinstance(v, int) else str(v)


# ------------------------------------------------------------------ generate

def cmd_generate(args) -> int:
    seed = _seed(args)
    cls = args.cls
    if cls in ("star-stab", "path-stab"):
        cfg = instances.GenConfig(args.blocks, args.nodes, tuple(args.density), args.shared,
                                  "star" if cls == "star-stab" else "path", seed)
        try:
            inst = instances.gen_stab(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    elif cls == "packing":
        inst = instances.gen_random_packing(args.blocks, args.nbin, args.ncont, seed, args.nlocal)
    elif cls == "covering":
        inst = instances.gen_random_covering(args.blocks, args.nbin, args.ncont, seed, args.nlocal)
    elif cls.startswith("canned:"):
        try:
            inst = instances.canned(cls.split(":", 1)[1]).instance
        except KeyError as exc:
            raise UsageError(str(exc)) from None
    else:
        raise UsageError(f"unknown class {cls!r}")
    if args.out:
        save_instance(inst, args.out)
    else:
        sys.stdout.write(dumps_instance(inst))
    return EXIT_OK


# ------------------------------------------------------------------ decompose

def cmd_decompose(args) -> int:
    try:
        flat = structure.load_flat(args.inp)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.inp}: {exc}") from None
    g = structure.build_intersection_graph(flat)
    td = structure.tree_decompose(g)
    ok, viol = structure.validate_tree_decomposition(g, td)
    if not ok:
        print("\n".join(viol), file=sys.stderr)
        return EXIT_INFEASIBLE
    try:
        inst = structure.reformulate_to_blocks(flat, td)
    except structure.UnsupportedCoupling as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        save_instance(inst, args.out)
    rep = {"blocks": len(td.bags), "width": td.width, "tau": td.tau(),
           "treeEdges": len(td.tree_edges)}
    wanted = args.report or ["width"]
    for key in wanted:
        if key == "all":
            for k, v in rep.items():
                print(f"{k}: {v}")
        elif key in rep:
            print(f"{key}: {rep[key]}")
        else:
            raise UsageError(f"unknown report field {key!r}")
    return EXIT_OK


# ------------------------------------------------------------------ solve

METHOD_LABELS = {"l": "L", "v": "VL", "sda": "SDA", "exact": "EXACT"}


def _label(method, k):
    if method == "m":
        return "QL" if k == 2 else f"M{k}"
    return METHOD_LABELS[method]


class _PrimalTracker:
    """Wraps a DualObjective and cross-fixes every evaluation's argmins into a primal bound."""

    def __init__(self, inst, obj, enabled=True):
        self.inst = inst
        self.obj = obj
        self.enabled = enabled
        self.best = math.inf
        self.memo = {}

    def __call__(self, point):
        value, g, res = self.obj(point)
        if self.enabled and res.feasible:
            self.offer(res)
        return value, g, res

    def offer(self, res):
        cands = {i: (x, y) for i, (x, y, _) in res.blockSolutions.items()}
        rec = duals.recover_primal_bound(self.inst, cands, self.memo)
        if rec is not None and rec[1] < self.best:
            self.best = rec[1]


def _run_optimizer(name, fn, budget, primal, start, tol):
    if name == "subgrad":
        return optimize.subgradient_maximize(fn, optimize.Polyak(primal), budget, start, tol=tol)
    if name == "prox":
        return optimize.proximal_bundle_maximize(fn, budget, primal, start, tol=tol)
    if name == "level":
        return optimize.level_bundle_maximize(fn, budget, primal, start, tol=tol)
    raise UsageError(f"unknown optimizer {name!r}")


def solve_instance(inst, method, k=2, optimizer="prox", budget=200, warmstart=False,
                   exact_primal=False, jobs=1, scale=2.0, tol=GAP_TOL):
    """Library form of ``solve``; returns (report dict, trace rows)."""
    t0 = time.perf_counter()
    rep = {"method": _label(method, k), "optimizer": optimizer if method in ("l", "m", "v") else None,
           "budget": budget, "k": k if method == "m" else None}
    trace = []
    if method == "exact":
        res = verify.brute_force_opt(inst)
        if not math.isfinite(res.value):
            rep.update(status="infeasible", primal=math.inf, dual=math.inf, gap=math.inf,
                       iterations=0, evaluations=0)
            return rep, trace
        rep.update(status="optimal", primal=res.value, dual=res.value, gap=0.0,
                   iterations=1, evaluations=0)
        rep["seconds"] = time.perf_counter() - t0
        return rep, trace
    if method == "sda":
        st = duals.run_sda(inst, budget=budget, jobs=jobs)
        primal = st.UB
        if exact_primal:
            primal = verify.brute_force_opt(inst).value
        status = {"optimal": "optimal", "budget": "budget",
                  "infeasible-subproblem": "optimal"}.get(st.status, st.status)
        if not math.isfinite(st.UB) and st.status == "infeasible-subproblem":
            status = "infeasible"
        for it, lb, ub, nrem in st.history:
            trace.append({"iter": it, "value": lb, "lb": lb, "ub": ub, "norm_g": 0.0,
                          "mu_nnz": nrem, "seconds": 0.0})
        rep.update(status=status, primal=primal, dual=st.LB, gap=gap_of(primal, st.LB),
                   iterations=st.iterations, evaluations=st.iterations)
        rep["seconds"] = time.perf_counter() - t0
        return rep, trace

    if method == "v":
        try:
            duals._star_groups(inst)
        except ValueError as exc:
            raise UsageError(f"{exc}; the vertex dual is limited to two-block and star "
                             "layouts, use --method m for general trees") from None
    main = duals.DualObjective(inst, method, k=k, scale=scale, jobs=jobs)
    tracker = _PrimalTracker(inst, main, enabled=not exact_primal)
    primal = math.inf
    if exact_primal:
        primal = verify.brute_force_opt(inst).value
    start = {}
    evals = 0
    rows_offset = 0
    if warmstart and method != "l":
        warm = duals.DualObjective(inst, "l", jobs=jobs)
        wtrack = _PrimalTracker(inst, warm, enabled=not exact_primal)
        wtrack({})
        evals += 1
        p0 = primal if exact_primal else wtrack.best
        if not math.isfinite(p0):
            rep.update(status="infeasible", primal=math.inf, dual=-math.inf, gap=math.inf,
                       iterations=0, evaluations=evals)
            return rep, trace
        wst = _run_optimizer("prox" if optimizer != "subgrad" else "subgrad", wtrack,
                             max(1, budget // 2 - 1), p0, {}, tol)
        evals += wst.evaluations
        start = dict(wst.bestPoint)  # zero-extended: no mu entries yet
        trace.extend(wst.trace)
        rows_offset = len(trace)
        tracker.best = min(tracker.best, wtrack.best)
        tracker.memo = wtrack.memo
    L0, _, res0 = tracker(start)
    evals += 1
    if not res0.feasible:
        rep.update(status="infeasible", primal=math.inf, dual=-math.inf, gap=math.inf,
                   iterations=0, evaluations=evals)
        return rep, trace
    if not exact_primal:
        primal = tracker.best
    if not math.isfinite(primal):
        rep.update(status="no-primal", primal=math.inf, dual=L0, gap=math.inf,
                   iterations=0, evaluations=evals)
        return rep, trace
    st = _run_optimizer(optimizer, tracker, max(1, budget - evals), primal, start, tol)
    evals += st.evaluations
    for row in st.trace:
        row = dict(row)
        row["iter"] += rows_offset
        trace.append(row)
    if not exact_primal:
        primal = min(primal, tracker.best)
    dual = max(st.bestValue, L0)
    g = gap_of(primal, dual)
    status = "optimal" if g <= tol else "budget"
    rep.update(status=status, primal=primal, dual=dual, gap=g, iterations=len(trace),
               evaluations=evals, firstValue=st.firstValue, warmStartValue=L0 if warmstart else None,
               oracleCalls=main.oracle_calls)
    rep["seconds"] = time.perf_counter() - t0
    return rep, trace


def cmd_solve(args) -> int:
    try:
        inst = load_instance(args.inp)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"{args.inp}: {exc}") from None
    if args.method == "m" and args.k is None:
        raise UsageError("--method m needs --k")
    k = args.k if args.k is not None else 2
    if k < 1:
        raise UsageError("--k must be >= 1")
    sink = None
    if args.trace_subsolve:
        from . import subsolve
        sink = []
        subsolve.set_trace_sink(sink)
    try:
        rep, trace = solve_instance(inst, args.method, k, args.optimizer, args.budget,
                                    args.warmstart, args.exact_primal, args.jobs, args.scale)
    finally:
        if sink is not None:
            from . import subsolve
            subsolve.set_trace_sink(None)
    rep["instance"] = os.path.basename(args.inp)
    rep["seed"] = _seed(args)
    if args.trace:
        optimize.write_trace(args.trace, trace, include_time=args.with_time)
        rep["trace"] = args.trace
    if sink is not None:
        with open(args.trace_subsolve, "w") as fh:
            for row in sink:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if not args.with_time:
        rep.pop("seconds", None)
    clean = {k2: _finite(v) if isinstance(v, float) else v for k2, v in rep.items()}
    if args.out:
        _dump(clean, args.out)
    lines = [f"method      {rep['method']}"]
    if rep.get("optimizer"):
        lines.append(f"optimizer   {rep['optimizer']}")
    lines += [f"dual        {rep['dual']:.10g}", f"primal      {rep['primal']:.10g}",
              f"gap         {100 * rep['gap']:.4f}%" if math.isfinite(rep["gap"]) else "gap         inf",
              f"iterations  {rep['iterations']}", f"evaluations {rep['evaluations']}",
              f"status      {rep['status']}"]
    print("\n".join(lines))
    if rep["status"] in ("infeasible", "no-primal"):
        return EXIT_INFEASIBLE
    if rep["status"] == "budget":
        return EXIT_BUDGET
    return EXIT_OK


# ------------------------------------------------------------------ verify

def _suite_duality(inst, kmax=None):
    out = []
    opt = verify.brute_force_opt(inst).value
    tables = verify.hull_tables(inst)
    n = max((len(e.pairs) for e in inst.edges), default=0)
    vals = {"classical": verify.dual_oracle_hull_lp(inst, "classical", tables=tables)}
    for k in range(1, (kmax or n) + 1):
        vals[f"M{k}"] = verify.dual_oracle_hull_lp(inst, build_monomial_family(inst, k), tables=tables)
    vals["full"] = verify.dual_oracle_hull_lp(inst, "full", tables=tables)
    try:
        duals._star_groups(inst)
        vals["vertices"] = verify.dual_oracle_hull_lp(inst, "vertices", tables=tables)
    except ValueError:
        pass
    chain = [vals["classical"]] + [vals[f"M{k}"] for k in range(1, (kmax or n) + 1)]
    mono = all(b >= a - 1e-7 for a, b in zip(chain, chain[1:]))
    weak = all(v <= opt + 1e-7 for v in vals.values())
    out.append({"check": "hierarchy", "opt": opt, "values": vals, "pass": mono and weak})
    out.append({"check": "full-monomial", "opt": opt, "value": vals["full"],
                "pass": abs(vals["full"] - opt) <= 1e-7})
    if "vertices" in vals:
        out.append({"check": "vertex", "opt": opt, "value": vals["vertices"],
                    "pass": abs(vals["vertices"] - opt) <= 1e-7})
    return out


def _suite_bounds(inst, ks=None):
    from .model import augment_recourse

    if inst.kind not in ("packing", "covering"):
        raise UsageError("bounds suite needs an instance tagged packing or covering")
    if inst.kind == "packing":
        inst = augment_recourse(inst, allow_star=True)
    n = max(len(e.pairs) for e in inst.edges)
    ks = ks or sorted({1, max(1, n // 2), n})
    opt = verify.brute_force_opt(inst).value
    tables = verify.hull_tables(inst)
    out = []
    for k in ks:
        dual = verify.dual_oracle_hull_lp(inst, build_monomial_family(inst, k), tables=tables)
        cert = verify.check_bounds(inst, k, dual, opt)
        out.append({"check": "bound", "k": k, "t": cert.t, "factor": cert.bound,
                    "eta": cert.etaK, "theta": cert.thetaK, "tau": cert.tau, "dual": dual,
                    "opt": opt, "ratio": _finite(cert.observedRatio), "rule": cert.rule,
                    "pass": cert.passed})
    return out


def _suite_good(inst, ks=None):
    td = structure.instance_layout(inst)
    n = max((len(e.pairs) for e in inst.edges), default=1)
    ks = ks or sorted({1, max(1, n // 2), n})
    out = []
    for k in ks:
        good, kgood = verify.enumerate_good_sets(td, k)
        eta, theta = verify.compute_eta_theta(td, k, (good, kgood))
        consistent = all(any(W <= G for G in good) for W in kgood)
        out.append({"check": "good-sets", "k": k, "maximalGood": len(good),
                    "maximalKGood": len(kgood), "eta": eta, "theta": theta, "tau": td.tau(),
                    "pass": consistent})
    return out


def _suite_affine(inst):
    chk = verify.check_affine_redundancy(inst)
    return [{"check": "affine", "classical": chk.classical, "withAffine": chk.with_affine,
             "withQuadratic": chk.with_quadratic, "pass": chk.passed}]


def cmd_verify(args) -> int:
    try:
        inst = load_instance(args.inp)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"{args.inp}: {exc}") from None
    rep = validate_instance(inst)
    certs = [{"check": "validate", "violations": rep.violations, "warnings": rep.warnings,
              "pass": rep.ok}]
    ks = [args.k] if args.k else None
    suite = args.suite
    if suite == "duality":
        certs += _suite_duality(inst)
    elif suite == "bounds":
        certs += _suite_bounds(inst, ks)
    elif suite == "good":
        certs += _suite_good(inst, ks)
    elif suite == "affine":
        if len(inst.edges) != 1:
            raise UsageError("affine suite expects a two-block instance")
        certs += _suite_affine(inst)
    _dump(certs, args.out)
    return EXIT_OK if all(c["pass"] for c in certs[1:]) else EXIT_BUDGET


# ------------------------------------------------------------------ report

def build_report(paths):
    """Group solve reports by method label (first-seen order) and average them."""
    groups = {}
    for p in paths:
        try:
            with open(p) as fh:
                rep = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{p}: cannot read report ({exc})") from None
        for key in ("method", "gap", "iterations"):
            if key not in rep:
                raise UsageError(f"{p}: report lacks {key!r}")
        if rep.get("trace"):
            try:
                optimize.read_trace(rep["trace"])
            except (OSError, ValueError) as exc:
                raise UsageError(str(exc)) from None
        groups.setdefault(rep["method"], []).append(rep)
    rows = []
    for method, reps in groups.items():
        gaps = [float(r["gap"]) for r in reps]
        its = [float(r["iterations"]) for r in reps]
        secs = [float(r["seconds"]) for r in reps if "seconds" in r]
        rows.append({"method": method, "runs": len(reps), "gap": sum(gaps) / len(gaps),
                     "iterations": sum(its) / len(its),
                     "seconds": (sum(secs) / len(secs)) if secs else None})
    return rows


def cmd_report(args) -> int:
    rows = build_report(args.reports)
    head = f"{'method':<8} {'runs':>4} {'gap %':>10} {'iterations':>10} {'seconds':>9}"
    print(head)
    for r in rows:
        sec = f"{r['seconds']:9.3f}" if r["seconds"] is not None else f"{'-':>9}"
        print(f"{r['method']:<8} {r['runs']:>4} {100 * r['gap']:>10.4f} {r['iterations']:>10.1f} {sec}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("method,runs,gap,iterations,seconds\n")
            for r in rows:
                sec = "" if r["seconds"] is None else repr(r["seconds"])
                fh.write(f"{r['method']},{r['runs']},{r['gap']!r},{r['iterations']!r},{sec}\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="decompdual", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="write a generated or canned instance")
    g.add_argument("--class", dest="cls", required=True,
                   help="star-stab | path-stab | packing | covering | canned:<name>")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.add_argument("--blocks", type=int, default=4)
    g.add_argument("--nodes", type=int, default=20)
    g.add_argument("--shared", type=int, default=7)
    g.add_argument("--density", type=float, nargs=2, default=(0.1, 0.15))
    g.add_argument("--nbin", type=int, default=4)
    g.add_argument("--ncont", type=int, default=1)
    g.add_argument("--nlocal", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("decompose", help="tree-decompose a flat MIP into blocks")
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out")
    d.add_argument("--report", action="append", help="width | tau | blocks | treeEdges | all")
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("solve", help="bound an instance with one dual method")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--method", choices=("l", "m", "v", "sda", "exact"), required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--optimizer", choices=("subgrad", "prox", "level"), default="prox")
    s.add_argument("--budget", type=int, default=200, help="dual evaluations")
    s.add_argument("--warmstart", action="store_true")
    s.add_argument("--exact-primal", action="store_true")
    s.add_argument("--scale", type=float, default=2.0, help="vertex-cut scaling")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trace")
    s.add_argument("--trace-subsolve")
    s.add_argument("--out")
    s.add_argument("--with-time", action="store_true", help="record wall-clock (breaks byte-identity)")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run oracle suites")
    v.add_argument("--in", dest="inp", required=True)
    v.add_argument("--suite", choices=("duality", "bounds", "good", "affine"), required=True)
    v.add_argument("--k", type=int)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="compare solve reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--csv")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
