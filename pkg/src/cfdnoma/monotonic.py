"""Global sum-rate power allocation by polyblock outer approximation.

The problem is posed in the space of ``z_d = 1 + SINR_d``. The achievable set
is normal (downward closed), so the weighted sum of ``log2 z_d`` is maximised
on its upper boundary. A union of boxes anchored at the rate-floor corner
``z_lb`` is shrunk around the boundary until the best vertex is within
``solver_tol`` of the incumbent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

from .link import LinkModel, build_link_model
from .model import PowerAllocation, SimConfig, SolverResult

log = logging.getLogger(__name__)

LAMBDA_TOL = 1e-6


def minimal_power(gamma: np.ndarray, model: LinkModel):
    """Componentwise-minimal powers meeting SINR targets ``gamma``, ignoring caps.

    Returns ``None`` when no finite non-negative solution exists (the Perron
    root of the normalised gain matrix is >= 1 on the targets' support).
    This is the limit of the standard fixed-point iteration started at 0.
    """
    gamma = np.asarray(gamma, dtype=float)
    p = np.zeros(model.n)
    on = np.flatnonzero(gamma > 0)
    if on.size == 0:
        return p
    scale = gamma[on] / model.signal_gain[on]
    M = scale[:, None] * model.B[np.ix_(on, on)]
    rhs = scale * model.noise[on]
    try:
        x = np.linalg.solve(np.eye(on.size) - M, rhs)
    except np.linalg.LinAlgError:
        return None
    # a positive solution of (I - M)x = rhs > 0 certifies rho(M) < 1
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        return None
    p[on] = x
    return p


def within_caps(p: np.ndarray, model: LinkModel, rtol: float = 1e-12) -> bool:
    if np.any(p > model.cap * (1 + rtol)):
        return False
    for idx, cap in model.groups:
        if p[list(idx)].sum() > cap * (1 + rtol):
            return False
    return True


def fixed_point_iteration(gamma, model: LinkModel, max_iter: int = 100_000, rtol: float = 1e-9):
    """The textbook map p <- gamma * (n + B p) / a from p = 0.

    Returns ``(status, p)`` with status ``"feasible"``, ``"infeasible"`` or
    ``"undecided"``. Iterates increase monotonically, so the first cap
    violation already proves infeasibility.
    """
    gamma = np.asarray(gamma, dtype=float)
    g = gamma / model.signal_gain
    p = np.zeros(model.n)
    for _ in range(max_iter):
        nxt = g * (model.noise + model.B @ p)
        if not within_caps(nxt, model):
            return "infeasible", nxt
        if np.all(np.abs(nxt - p) <= rtol * np.maximum(np.abs(nxt), 1e-300)):
            return "feasible", nxt
        p = nxt
    log.warning("fixed-point iteration budget exhausted; treating targets as infeasible")
    return "undecided", p


def targets_feasible(gamma, model: LinkModel):
    """Minimal powers if SINR targets ``gamma`` are reachable within caps, else None."""
    p = minimal_power(gamma, model)
    if p is None or not within_caps(p, model):
        return None
    return p


def sinr_targets_feasible(gamma, ch, order, scheme, cfg: SimConfig):
    p = targets_feasible(gamma, build_link_model(ch, order, scheme, cfg))
    return None if p is None else PowerAllocation.from_vector(p, len(order.dl_cell))


@dataclass
class Projection:
    lam_lo: float  # largest feasible step found
    lam_hi: float  # smallest infeasible step found (1.0 when v itself is feasible)
    y_lo: np.ndarray
    y_hi: np.ndarray
    p: np.ndarray  # minimal powers at y_lo
    calls: int


def _reachable(y, model):
    return targets_feasible(np.maximum(y - 1.0, 0.0), model)


def _reachable_batch(Y, model: LinkModel) -> np.ndarray:
    """Vectorised reachability of each row of ``Y`` (same test as ``_reachable``)."""
    gamma = np.maximum(Y - 1.0, 0.0)
    scale = gamma / model.signal_gain
    M = scale[:, :, None] * model.B[None, :, :]
    rhs = scale * model.noise
    A = np.eye(model.n)[None, :, :] - M
    ok = np.ones(len(Y), dtype=bool)
    try:
        X = np.linalg.solve(A, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        return np.array([_reachable(y, model) is not None for y in Y])
    on = gamma > 0
    ok &= np.all(np.isfinite(X), axis=1)
    ok &= np.all((X > 0) | ~on, axis=1)
    ok &= np.all(X <= model.cap * (1 + 1e-12), axis=1)
    for idx, cap in model.groups:
        ok &= X[:, list(idx)].sum(axis=1) <= cap * (1 + 1e-12)
    return ok


def project_to_boundary(v, anchor, model: LinkModel, tol: float = LAMBDA_TOL, points: int = 15) -> Projection:
    """Search along anchor + lam (v - anchor) for the last reachable point.

    Reachability is monotone in lam, so each round tests ``points`` evenly
    spaced steps inside the current bracket at once (bisection when
    ``points == 1``) until the bracket is narrower than ``tol``. ``y_hi``
    lies on or beyond the boundary, so every point >= ``y_hi`` is
    unreachable; the cut uses ``y_hi`` and the incumbent uses ``y_lo``.
    ``anchor`` must itself be reachable.
    """
    v = np.asarray(v, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    p = _reachable(v, model)
    if p is not None:
        return Projection(1.0, 1.0, v, v, p, 1)
    lo, hi, calls = 0.0, 1.0, 1
    d = v - anchor
    while hi - lo > tol:
        lams = lo + (hi - lo) * np.arange(1, points + 1) / (points + 1)
        ok = _reachable_batch(anchor + lams[:, None] * d[None, :], model)
        calls += points
        bad = np.flatnonzero(~ok)
        j = bad[0] if bad.size else points  # first unreachable step
        if j > 0:
            lo = lams[j - 1]
        if j < points:
            hi = lams[j]
    p_lo = _reachable(anchor + lo * d, model)
    if p_lo is None:
        raise ValueError("projection anchor is not reachable")
    return Projection(lo, hi, anchor + lo * d, anchor + hi * d, p_lo, calls + 1)


def _phi(V, w):
    return np.log2(V) @ w


ANCHOR_SHIFT = 0.5


def polyblock(model: LinkModel, cfg: SimConfig, anchor_shift: float = ANCHOR_SHIFT,
              max_iter: int | None = None) -> SolverResult:
    """Polyblock outer approximation on a compiled link model.

    Rays start at ``anchor_shift * z_lb`` (strictly below the rate-floor
    corner); anchoring exactly at the corner stalls whenever the optimum
    switches a user off. Vertices falling below ``z_lb`` are pruned and an
    incumbent is only accepted when it meets every rate floor.
    """
    tol = cfg.solver_tol
    w = model.weight
    z_lb = model.rate_floor(cfg.r_min_bps_hz)
    z_ub = model.z_upper()
    anchor = anchor_shift * z_lb
    zero = PowerAllocation.zeros(model.n_dl, model.n_ul)
    if np.any(z_lb > z_ub):
        return SolverResult(zero, 0.0, False, 0, [], "infeasible", "polyblock")
    p_best = targets_feasible(z_lb - 1.0, model)
    if p_best is None:
        return SolverResult(zero, 0.0, False, 0, [], "infeasible", "polyblock")
    cbv = model.objective(p_best)

    V = z_ub[None, :].copy()
    phi = _phi(V, w)
    trace = []
    status = "converged"
    it = 0
    generated = 1
    while True:
        top = phi.max()
        ties = np.flatnonzero(phi == top)
        k = ties[0] if ties.size == 1 else ties[np.lexsort(V[ties].T[::-1])[0]]
        trace.append((it, float(top), float(cbv), len(V)))
        if top - cbv <= tol:
            break
        if generated > cfg.vertex_budget or (max_iter is not None and it >= max_iter):
            status = "budget_exhausted"
            break
        it += 1
        proj = project_to_boundary(V[k], anchor, model)
        p = proj.p
        if np.any(proj.y_lo < z_lb):
            p = targets_feasible(np.maximum(proj.y_lo, z_lb) - 1.0, model)
        if p is not None:
            val = model.objective(p)
            if val > cbv:
                cbv, p_best = val, p
        if proj.lam_lo == 1.0:
            # the best vertex is itself achievable: optimal
            trace.append((it, float(cbv), float(cbv), len(V)))
            break
        y = proj.y_hi
        cut = np.all(V > y, axis=1)
        cut[k] = True
        parents = V[cut]
        keep = V[~cut]
        rows, cols = np.nonzero(parents > y)
        kids = parents[rows]
        kids[np.arange(len(kids)), cols] = y[cols]
        kphi = _phi(kids, w)
        ok = (kphi > cbv) & np.all(kids >= z_lb, axis=1)
        kids, kphi, cols = kids[ok], kphi[ok], cols[ok]
        if len(kids) > 1:
            kids, kphi = _drop_dominated(kids, kphi, cols)
        generated += len(kids)
        V = np.vstack([keep, kids])
        phi = np.concatenate([phi[~cut], kphi])
        live = phi > cbv
        V, phi = V[live], phi[live]
        if len(V) == 0:
            trace.append((it, float(cbv), float(cbv), 0))
            break

    result_p = PowerAllocation.from_vector(p_best, model.n_dl)
    return SolverResult(result_p, model.objective(p_best), True, it, trace, status, "polyblock")


@numba.njit(cache=True)
def _dominated_mask(kids, cols):
    """mask[i]: another kid cut along the same coordinate is >= kids[i].

    Among identical kids only the first survives. Kids from different
    directions, and vertices that were not cut, cannot dominate a kid
    (they would have had to exceed the cut point on every coordinate).
    """
    nk, n = kids.shape
    mask = np.zeros(nk, dtype=np.bool_)
    for i in range(nk):
        for j in range(nk):
            if j == i or cols[j] != cols[i]:
                continue
            ge = True
            eq = True
            for c in range(n):
                if kids[j, c] < kids[i, c]:
                    ge = False
                    break
                if kids[j, c] != kids[i, c]:
                    eq = False
            if ge and (not eq or j < i):
                mask[i] = True
                break
    return mask


def _drop_dominated(kids, kphi, cols):
    dom = _dominated_mask(np.ascontiguousarray(kids), np.ascontiguousarray(cols))
    return kids[~dom], kphi[~dom]


def solve_polyblock(ch, order, scheme, cfg: SimConfig) -> SolverResult:
    return polyblock(build_link_model(ch, order, scheme, cfg), cfg)
