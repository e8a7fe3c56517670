"""Maximisers for concave dual functions.

Every method minimises ``f = -L`` internally and reports in ``L`` terms.  An
``evalFn`` takes a sparse point (dict key -> value) and returns
``(L value, L subgradient dict, extra)``; keys missing from a dict are zero.

Budgets count calls to ``evalFn``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

DEFAULT_TOL = 1e-6


class MasterError(RuntimeError):
    pass


@dataclass
class Cut:
    point: dict
    value: float     # f at point
    subgrad: dict    # gradient of f at point

    def at(self, point: dict) -> float:
        v = self.value
        for k, g in self.subgrad.items():
            v += g * (point.get(k, 0.0) - self.point.get(k, 0.0))
        return v


@dataclass
class OptimizerState:
    bestValue: float = -math.inf        # best L seen (= -UB on f)
    bestPoint: dict = field(default_factory=dict)
    modelBound: float = math.inf        # upper bound on max L (= -LB on f)
    iterate: dict = field(default_factory=dict)
    cuts: list = field(default_factory=list)
    iterations: int = 0
    evaluations: int = 0
    status: str = "running"             # optimal | budget | zero-subgradient
    trace: list = field(default_factory=list)
    firstValue: float | None = None

    @property
    def gap(self) -> float:
        return self.modelBound - self.bestValue


def mu_nnz(point: dict) -> int:
    return sum(1 for k, v in point.items() if k[0] in ("m", "v") and v != 0.0)


def _norm2(d: dict) -> float:
    return float(sum(v * v for v in d.values()))


def _record(st, value, g, t0):
    st.trace.append({"iter": st.iterations, "value": value, "lb": st.bestValue,
                     "ub": st.modelBound, "norm_g": math.sqrt(_norm2(g)),
                     "mu_nnz": mu_nnz(st.iterate), "seconds": time.perf_counter() - t0})


def _converged(st, tol):
    if not math.isfinite(st.modelBound) or not math.isfinite(st.bestValue):
        return False
    return st.modelBound - st.bestValue <= tol * max(1.0, abs(st.bestValue))


# ------------------------------------------------------------------ subgradient

@dataclass(frozen=True)
class FixedStep:
    step: float


@dataclass(frozen=True)
class Polyak:
    target: float          # an upper bound on max L (or the optimum itself)


def subgradient_maximize(evalFn, rule, budget: int, start: dict | None = None,
                         project=None, tol: float = DEFAULT_TOL) -> OptimizerState:
    """Plain subgradient ascent keeping the best iterate."""
    t0 = time.perf_counter()
    st = OptimizerState(iterate=dict(start or {}))
    if isinstance(rule, Polyak):
        st.modelBound = rule.target
    point = dict(st.iterate)
    while st.evaluations < budget:
        L, g, _ = evalFn(point)
        st.evaluations += 1
        st.iterations += 1
        st.iterate = point
        if st.firstValue is None:
            st.firstValue = L
        if L > st.bestValue:
            st.bestValue, st.bestPoint = L, dict(point)
        _record(st, L, g, t0)
        n2 = _norm2(g)
        if n2 == 0.0:
            st.status = "zero-subgradient"
            st.modelBound = min(st.modelBound, L)
            return st
        if isinstance(rule, Polyak):
            if _converged(st, tol):
                st.status = "optimal"
                return st
            step = max(rule.target - L, 0.0) / n2
            if step == 0.0:
                st.status = "optimal"
                return st
        else:
            step = rule.step
        nxt = dict(point)
        for k, v in g.items():
            nxt[k] = nxt.get(k, 0.0) + step * v
        if project is not None:
            nxt = project(nxt)
        point = {k: v for k, v in nxt.items() if v != 0.0}
    st.status = "budget"
    return st


# ------------------------------------------------------------------ master problems

class _Space:
    """Dense coordinates for the union of keys seen by the bundle."""

    def __init__(self):
        self.index = {}

    def add(self, d):
        for k in d:
            if k not in self.index:
                self.index[k] = len(self.index)

    def vec(self, d):
        v = np.zeros(len(self.index))
        for k, x in d.items():
            v[self.index[k]] = x
        return v

    def sparse(self, v):
        keys = list(self.index)
        return {keys[i]: float(x) for i, x in enumerate(v) if x != 0.0}


@dataclass
class MasterSolution:
    point: dict
    t: float
    nu: np.ndarray
    residuals: dict
    iterations: int


def _active_set(Q, r, eq_total=None, start=None, max_iter=None, tol=1e-12):
    """min 0.5 v'Qv - r'v  s.t. v >= 0 (and sum v = eq_total when given).

    Primal active-set; Q must be positive definite.  Returns (v, eta, iters)
    where eta is the multiplier of the equality (0 without it).
    """
    m = len(r)
    max_iter = max_iter or 50 * (m + 5)
    v = np.zeros(m)
    if eq_total is not None:
        j0 = 0 if start is None else start
        v[j0] = eq_total
        free = [j0]
    else:
        free = []
    eta = 0.0
    for it in range(max_iter):
        F = sorted(free)
        if F:
            QF = Q[np.ix_(F, F)]
            if eq_total is not None:
                K = np.zeros((len(F) + 1, len(F) + 1))
                K[:-1, :-1] = QF
                K[:-1, -1] = -1.0
                K[-1, :-1] = 1.0
                rhs = np.concatenate([r[F], [eq_total]])
                sol = np.linalg.solve(K, rhs)
                pF, eta_new = sol[:-1], sol[-1]
            else:
                pF, eta_new = np.linalg.solve(QF, r[F]), 0.0
        else:
            pF, eta_new = np.zeros(0), 0.0
        p = np.zeros(m)
        p[F] = pF
        if np.all(pF >= -tol):
            v = np.maximum(p, 0.0)
            eta = eta_new
            w = Q @ v - r - eta
            out = [j for j in range(m) if j not in free]
            if not out:
                return v, eta, it + 1
            j = min(out, key=lambda j: (w[j], j))
            if w[j] >= -1e-13 * (1.0 + abs(r).max()):
                return v, eta, it + 1
            free.append(j)
            continue
        # step towards p until a free coordinate hits zero
        step, block = 1.0, None
        for i in F:
            if p[i] < -tol and v[i] - p[i] > 0:
                s = v[i] / (v[i] - p[i])
                if s < step:
                    step, block = s, i
        v = v + step * (p - v)
        if block is not None:
            v[block] = 0.0
            free.remove(block)
        v = np.maximum(v, 0.0)
    raise MasterError(f"active-set QP did not converge in {max_iter} iterations")


def solve_master_qp(cuts, center: dict, mode: str, alpha: float = None, level: float = None,
                    lb: float = None, reg: float = 1e-12) -> MasterSolution:
    """Prox or level master problem, solved through its dual over cut weights.

    prox:  min ||lam - center||^2 + alpha t,  t >= lb,  t >= cut_j(lam)
    level: min ||lam - center||^2,            cut_j(lam) <= level
    """
    space = _Space()
    space.add(center)
    for c in cuts:
        space.add(c.subgrad)
        space.add(c.point)
    cvec = space.vec(center)
    dim = len(space.index)
    rows, h = [], []
    for c in cuts:
        g = space.vec(c.subgrad)
        rows.append(g)
        h.append(c.value + g @ (cvec - space.vec(c.point)))
    if mode == "prox":
        if lb is None or not math.isfinite(lb):
            raise MasterError("prox master needs a finite lower-bound floor")
        if alpha is None or alpha < 0:
            raise MasterError("prox master needs alpha >= 0")
        rows.insert(0, np.zeros(dim))
        h.insert(0, lb)
    elif mode == "level":
        if level is None:
            raise MasterError("level master needs a level value")
        h = [x - level for x in h]
    else:
        raise ValueError(f"unknown master mode {mode!r}")
    Gm = np.array(rows).reshape(len(rows), dim)
    h = np.array(h)
    if mode == "prox" and alpha == 0.0:
        t = max(h.max(), lb)
        return MasterSolution(dict(center), t, np.zeros(len(h)), {}, 0)
    gram = 0.5 * (Gm @ Gm.T)
    Q = gram + reg * (1.0 + np.trace(gram) / max(1, len(h))) * np.eye(len(h))
    if mode == "prox":
        nu, eta, iters = _active_set(Q, h, eq_total=alpha)
    else:
        if len(h) == 0:
            return MasterSolution(dict(center), -math.inf, np.zeros(0), {}, 0)
        nu, eta, iters = _active_set(Q, h)
    lam = cvec - 0.5 * (Gm.T @ nu)
    model = Gm @ (lam - cvec) + h  # cut_j(lam) (minus level in level mode)
    if mode == "prox":
        t = float(model.max())
        stat = np.abs(2 * (lam - cvec) + Gm.T @ nu).max() if dim else 0.0
        res = {"stationarity": float(stat),
               "feasibility": float(max(0.0, (model - t).max())),
               "complementarity": float(np.abs(nu * (model - t)).max()),
               "weight": float(abs(nu.sum() - alpha))}
    else:
        t = float(model.max() + level) if len(model) else -math.inf
        res = {"stationarity": float(np.abs(2 * (lam - cvec) + Gm.T @ nu).max()) if dim else 0.0,
               "feasibility": float(max(0.0, model.max())),
               "complementarity": float(np.abs(nu * model).max())}
    return MasterSolution(space.sparse(lam), t, nu, res, iters)


def model_lower_bound(cuts, lb: float) -> float:
    """min t s.t. t >= lb, t >= cut_j(lam) over free lam (HiGHS)."""
    if not cuts:
        return float(lb)
    space = _Space()
    for c in cuts:
        space.add(c.subgrad)
        space.add(c.point)
    dim = len(space.index)
    A, b = [], []
    for c in cuts:
        g = space.vec(c.subgrad)
        # g.lam - t <= g.lam_j - f_j
        A.append(np.concatenate([g, [-1.0]]))
        b.append(g @ space.vec(c.point) - c.value)
    cost = np.zeros(dim + 1)
    cost[-1] = 1.0
    bounds = [(None, None)] * dim + [(lb, None)]
    res = linprog(cost, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status != 0:
        raise MasterError(f"model LP failed: {res.message}")
    return max(lb, float(res.fun))


def _prune(cuts, center, max_cuts):
    if len(cuts) <= max_cuts:
        return cuts
    slack = [(c.at(center), i) for i, c in enumerate(cuts)]
    keep = sorted(slack, reverse=True)[:max_cuts]
    idx = sorted(i for _, i in keep)
    return [cuts[i] for i in idx]


# ------------------------------------------------------------------ bundle methods

def _bundle(evalFn, budget, lbInit, start, tol, mode, alpha_level, max_cuts):
    if lbInit is None or not math.isfinite(lbInit):
        raise ValueError("bundle methods need a finite bound (a primal value)")
    t0 = time.perf_counter()
    st = OptimizerState(iterate=dict(start or {}))
    LB = -float(lbInit)  # floor on f = -L
    UB = math.inf
    st.modelBound = -LB
    point = dict(st.iterate)
    while st.evaluations < budget:
        L, gL, _ = evalFn(point)
        st.evaluations += 1
        st.iterations += 1
        st.iterate = point
        if st.firstValue is None:
            st.firstValue = L
        f = -L
        g = {k: -v for k, v in gL.items() if v != 0.0}
        st.cuts.append(Cut(dict(point), f, g))
        if f < UB:
            UB = f
            st.bestValue, st.bestPoint = L, dict(point)
        if not g:
            # zero subgradient: the current point minimises f
            LB = max(LB, f)
            st.modelBound = -LB
            _record(st, L, gL, t0)
            st.status = "optimal"
            return st
        LB = max(LB, model_lower_bound(st.cuts, LB))
        LB = min(LB, UB)
        st.modelBound = -LB
        _record(st, L, gL, t0)
        if _converged(st, tol):
            st.status = "optimal"
            return st
        if st.evaluations >= budget:
            break
        st.cuts = _prune(st.cuts, point, max_cuts)
        if mode == "prox":
            a = (f - LB) / _norm2(g)
            sol = solve_master_qp(st.cuts, point, "prox", alpha=a, lb=LB)
        else:
            level = alpha_level * LB + (1.0 - alpha_level) * UB
            if level < LB - 1e-12:
                UB = min(c.value for c in st.cuts)
                level = alpha_level * LB + (1.0 - alpha_level) * UB
                if level < LB - 1e-12:
                    raise MasterError("empty level set")
            sol = solve_master_qp(st.cuts, point, "level", level=level)
        point = {k: v for k, v in sol.point.items() if v != 0.0}
    st.status = "budget"
    return st


def proximal_bundle_maximize(evalFn, budget: int, lbInit: float, start: dict | None = None,
                             tol: float = DEFAULT_TOL, max_cuts: int = 500) -> OptimizerState:
    """Prox bundle with the adaptive weight alpha = (f - LB) / ||g||^2.

    ``lbInit`` is an upper bound on max L (a primal objective value); it
    becomes the floor of the cut model for f = -L.
    """
    return _bundle(evalFn, budget, lbInit, start, tol, "prox", None, max_cuts)


def level_bundle_maximize(evalFn, budget: int, lbInit: float, start: dict | None = None,
                          alpha: float = 0.3, tol: float = DEFAULT_TOL,
                          max_cuts: int = 500) -> OptimizerState:
    """Bundle-level: project the current point onto {model <= alpha LB + (1 - alpha) UB}.

    UB is refreshed with the current evaluation before the projection so the
    level is finite from the first iteration on.
    """
    return _bundle(evalFn, budget, lbInit, start, tol, "level", alpha, max_cuts)


# ------------------------------------------------------------------ trace IO

TRACE_FIELDS = ("iter", "value", "lb", "ub", "norm_g", "mu_nnz", "seconds")


def write_trace(path, trace, include_time=True):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for row in trace:
            w.writerow([row["iter"], repr(float(row["value"])), repr(float(row["lb"])),
                        repr(float(row["ub"])), repr(float(row["norm_g"])), row["mu_nnz"],
                        f"{row['seconds']:.6f}" if include_time else "0"])


def read_trace(path):
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header is None or tuple(header) != TRACE_FIELDS:
            raise ValueError(f"{path}: header must be {','.join(TRACE_FIELDS)}")
        for n, rec in enumerate(r, start=2):
            if len(rec) != len(TRACE_FIELDS):
                raise ValueError(f"{path}: row {n} has {len(rec)} fields")
            try:
                rows.append({"iter": int(rec[0]), "value": float(rec[1]), "lb": float(rec[2]),
                             "ub": float(rec[3]), "norm_g": float(rec[4]),
                             "mu_nnz": int(rec[5]), "seconds": float(rec[6])})
            except ValueError as exc:
                raise ValueError(f"{path}: row {n} is malformed ({exc})") from None
    return rows
