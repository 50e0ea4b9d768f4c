"""Suboptimal power allocation by successive convex approximation.

The sum rate splits as ``sum w log2(S + n + I) - sum w log2(n + I)``, both
terms concave in p because S and I are linear. Linearising the subtracted
term at the current point gives a concave minorant that touches the true
objective there; maximising it repeatedly never decreases the sum rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, nnls

from .link import LinkModel, build_link_model
from .model import PowerAllocation, SimConfig, SolverResult
from .monotonic import targets_feasible

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
KKT_TOL = 1e-6
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class DcSurrogate:
    model: LinkModel
    p_t: np.ndarray
    offset: np.ndarray  # log2(n_d + I_d(p_t))
    lin: np.ndarray  # lin[d] = dI_d/dp / ((n_d + I_d(p_t)) ln 2)

    def value(self, p) -> float:
        m = self.model
        p = np.asarray(p, dtype=float)
        total = m.signal_gain * p + m.noise + m.B @ p
        sub = self.offset + self.lin @ (p - self.p_t)
        return float(m.weight @ (np.log2(total) - sub))

    def gradient(self, p) -> np.ndarray:
        m = self.model
        p = np.asarray(p, dtype=float)
        total = m.signal_gain * p + m.noise + m.B @ p
        coef = m.weight / (total * LN2)
        g = m.B.T @ coef + m.signal_gain * coef
        return g - self.lin.T @ m.weight


def true_objective(model: LinkModel, p) -> float:
    return model.objective(np.asarray(p, dtype=float))


def interference_gradient_term(model: LinkModel, p) -> np.ndarray:
    """Gradient of sum_d w_d log2(n_d + I_d(p)), the subtracted concave term."""
    denom = (model.noise + model.B @ p) * LN2
    return model.B.T @ (model.weight / denom)


def objective_gradient(model: LinkModel, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    total = model.signal_gain * p + model.noise + model.B @ p
    coef = model.weight / (total * LN2)
    return model.B.T @ coef + model.signal_gain * coef - interference_gradient_term(model, p)


def build_surrogate(p_t, model: LinkModel) -> DcSurrogate:
    p_t = np.asarray(p_t, dtype=float)
    inter = model.noise + model.B @ p_t
    lin = model.B / (inter * LN2)[:, None]
    return DcSurrogate(model, p_t.copy(), np.log2(inter), lin)


# -- convex subproblem ----------------------------------------------------------

def linear_constraints(model: LinkModel, r_min: float):
    """Rows (G, h) with G p <= h, excluding the box 0 <= p <= cap, rows unit-normalised
    in cap-scaled coordinates."""
    rows, rhs = [], []
    for idx, cap in model.groups:
        g = np.zeros(model.n)
        g[list(idx)] = 1.0
        rows.append(g)
        rhs.append(cap)
    if r_min > 0:
        gmin = 2.0 ** (r_min / model.weight) - 1.0
        for d in range(model.n):
            # gmin (n + B p) - a p_d <= 0
            g = gmin[d] * model.B[d].copy()
            g[d] -= model.signal_gain[d]
            rows.append(g)
            rhs.append(-gmin[d] * model.noise[d])
    if not rows:
        return np.zeros((0, model.n)), np.zeros(0)
    G, h = np.array(rows), np.array(rhs)
    Gs = G * model.cap[None, :]
    norm = np.linalg.norm(Gs, axis=1)
    return Gs / norm[:, None], h / norm


def kkt_residual(grad_x, x, G, h, act_tol: float = 1e-7) -> float:
    """Scaled stationarity error of max f(x) s.t. 0 <= x <= 1, G x <= h.

    Multipliers of the near-active constraints come from non-negative least
    squares; the residual is ``|grad - sum mu_i a_i|_inf / max(1, |grad|_inf)``
    plus the worst complementarity product.
    """
    n = len(x)
    A = [np.eye(n), -np.eye(n), G]
    b = [np.ones(n), np.zeros(n), h]
    A = np.vstack(A)
    b = np.concatenate(b)
    slack = b - A @ x
    active = slack <= act_tol
    scale = max(1.0, float(np.max(np.abs(grad_x))))
    if not np.any(active):
        return float(np.max(np.abs(grad_x))) / scale
    mu, _ = nnls(A[active].T, grad_x, maxiter=50 * n)
    stat = np.max(np.abs(grad_x - A[active].T @ mu))
    comp = np.max(mu * np.maximum(slack[active], 0.0)) if mu.size else 0.0
    return float(stat + comp) / scale


def feasible(model: LinkModel, p, r_min: float, tol: float = FEAS_TOL) -> bool:
    if np.any(p < -tol * model.cap) or np.any(p > model.cap * (1 + tol)):
        return False
    G, h = linear_constraints(model, r_min)
    if len(G) and np.any(G @ (p / model.cap) - h > tol):
        return False
    return True


@dataclass
class Subproblem:
    p: np.ndarray
    kkt: float
    ok: bool


def solve_convex_subproblem(s: DcSurrogate, r_min: float, p_start=None) -> Subproblem:
    """Maximise the concave surrogate over the power box, DL sum caps and linear rate floors."""
    m = s.model
    cap = m.cap
    G, h = linear_constraints(m, r_min)
    x0 = np.clip((s.p_t if p_start is None else p_start) / cap, 0.0, 1.0)
    f0 = s.value(x0 * cap)
    scale = max(1.0, abs(f0))

    def fun(x):
        p = x * cap
        return -s.value(p) / scale, -(s.gradient(p) * cap) / scale

    cons = []
    if len(G):
        cons.append({"type": "ineq", "fun": lambda x: h - G @ x, "jac": lambda x: -G})
    best_x = x0
    for _ in range(3):
        res = minimize(fun, best_x, jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * m.n,
                       constraints=cons, options={"ftol": 1e-15, "maxiter": 500})
        x = np.clip(res.x, 0.0, 1.0)
        if len(G) and np.any(G @ x - h > FEAS_TOL):
            x = _repair(x, G, h, x0)
        if s.value(x * cap) >= s.value(best_x * cap):
            best_x = x
        kkt = kkt_residual(s.gradient(best_x * cap) * cap, best_x, G, h)
        if kkt <= KKT_TOL:
            break
    return Subproblem(best_x * cap, kkt, kkt <= KKT_TOL)


def _repair(x, G, h, x_feas):
    """Pull x toward a known feasible point until every linear row holds."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        y = x_feas + mid * (x - x_feas)
        if np.all(G @ y - h <= FEAS_TOL):
            lo = mid
        else:
            hi = mid
    return x_feas + lo * (x - x_feas)


# -- outer loop -------------------------------------------------------------------

def initial_point(model: LinkModel, cfg: SimConfig):
    """10% of every cap (projected onto the DL sum caps); the minimal-power point
    for the rate floors when that misses them; None if the floors are unreachable."""
    r_min = cfg.r_min_bps_hz
    p0 = model.project(cfg.sca_init_fraction * model.cap)
    if feasible(model, p0, r_min):
        return p0
    pmin = targets_feasible(model.rate_floor(r_min) - 1.0, model)
    if pmin is None:
        return None
    # nudge the minimal point towards p0 while the floors still hold
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if feasible(model, pmin + mid * (p0 - pmin), r_min):
            lo = mid
        else:
            hi = mid
    return pmin + lo * (p0 - pmin)


def sca(model: LinkModel, cfg: SimConfig, p0=None, check_minorant: bool = True) -> SolverResult:
    r_min = cfg.r_min_bps_hz
    starts = []
    if p0 is not None:
        starts.append(np.asarray(p0.as_vector() if isinstance(p0, PowerAllocation) else p0, dtype=float))
    else:
        first = initial_point(model, cfg)
        if first is None:
            zero = PowerAllocation.zeros(model.n_dl, model.n_ul)
            return SolverResult(zero, 0.0, False, 0, [], "infeasible", "sca")
        starts.append(first)
        rng = np.random.default_rng(0)
        for _ in range(cfg.sca_restarts - 1):
            cand = model.project(rng.random(model.n) * model.cap)
            if feasible(model, cand, r_min):
                starts.append(cand)

    best = None
    for start in starts:
        res = _sca_run(model, cfg, start, check_minorant)
        if best is None or res.objective_bps_hz > best.objective_bps_hz:
            best = res
    return best


def _sca_run(model, cfg, p, check_minorant):
    r_min = cfg.r_min_bps_hz
    obj = true_objective(model, p)
    trace = [(0, obj, 0.0, float("nan"))]
    status = "max_iter"
    it = 0
    for it in range(1, cfg.sca_max_iter + 1):
        s = build_surrogate(p, model)
        sub = solve_convex_subproblem(s, r_min)
        new = sub.p
        sur_new, sur_old = s.value(new), s.value(p)
        if sur_new < sur_old:
            new, sur_new = p, sur_old
        new_obj = true_objective(model, new)
        if check_minorant and new_obj < sur_new - 1e-9 * max(1.0, abs(sur_new)):
            raise AssertionError("surrogate is not a minorant of the objective")
        step = float(np.linalg.norm((new - p) / model.cap))
        trace.append((it, new_obj, step, sub.kkt))
        improvement = new_obj - obj
        p, obj = new, max(new_obj, obj)
        if improvement < cfg.solver_tol:
            status = "converged"
            break
    alloc = PowerAllocation.from_vector(p, model.n_dl)
    return SolverResult(alloc, true_objective(model, p), True, it, trace, status, "sca")


def solve_sca(ch, order, scheme, cfg: SimConfig, p0=None) -> SolverResult:
    return sca(build_link_model(ch, order, scheme, cfg), cfg, p0)
