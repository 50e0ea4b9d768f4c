"""Scheme dispatch and the brute-force grid oracle."""

from __future__ import annotations

import itertools
import logging

import numpy as np

from .link import LinkModel, build_link_model
from .model import PowerAllocation, SchemeKind, SimConfig, SolverResult
from .monotonic import polyblock
from .sca import sca

log = logging.getLogger(__name__)

MAX_GRID_VARIABLES = 6


class InstanceTooLarge(ValueError):
    pass


def grid_levels(cap: float, levels: int) -> np.ndarray:
    """0 followed by ``levels`` geometric points in (cap/1e4, cap].

    Points sit at cap * 10**(-4 + 4k/levels), k = 1..levels, so a grid with
    4x the levels contains every point of the coarser one.
    """
    k = np.arange(1, levels + 1)
    return np.concatenate([[0.0], cap * 10.0 ** (-4.0 + 4.0 * k / levels)])


def _grid_objectives(model: LinkModel, P: np.ndarray, r_min: float) -> np.ndarray:
    total = model.noise + P @ model.B.T
    sinr = model.signal_gain * P / total
    rates = model.weight * np.log2(1.0 + sinr)
    val = rates.sum(axis=1)
    ok = np.ones(len(P), dtype=bool)
    for idx, cap in model.groups:
        ok &= P[:, list(idx)].sum(axis=1) <= cap * (1 + 1e-12)
    if r_min > 0:
        ok &= np.all(rates >= r_min, axis=1)
    return np.where(ok, val, -np.inf)


def grid_search_model(model: LinkModel, cfg: SimConfig, levels: int, chunk: int = 1 << 18) -> SolverResult:
    if model.n > MAX_GRID_VARIABLES:
        raise InstanceTooLarge(f"{model.n} power variables; grid search allows at most {MAX_GRID_VARIABLES}")
    axes = [grid_levels(c, levels) for c in model.cap]
    shape = tuple(len(a) for a in axes)
    total = int(np.prod(shape))
    best_val, best_flat = -np.inf, -1
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        P = np.column_stack([axes[d][idx[d]] for d in range(model.n)])
        vals = _grid_objectives(model, P, cfg.r_min_bps_hz)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_flat = float(vals[j]), int(flat[j])
    zero = PowerAllocation.zeros(model.n_dl, model.n_ul)
    if best_flat < 0 or not np.isfinite(best_val):
        return SolverResult(zero, 0.0, False, total, [], "infeasible", "grid")
    best_idx = np.unravel_index(best_flat, shape)
    p = np.array([axes[d][best_idx[d]] for d in range(model.n)])
    step = _step_delta(model, cfg, axes, best_idx)
    res = SolverResult(PowerAllocation.from_vector(p, model.n_dl), model.objective(p), True, total,
                       [], "converged", "grid")
    res.info["grid_step_bps_hz"] = step
    return res


def _step_delta(model, cfg, axes, best_idx) -> float:
    """Largest objective change between the best grid point and a grid neighbour
    (one level up or down along any subset of coordinates)."""
    base = np.array([axes[d][best_idx[d]] for d in range(model.n)])
    f0 = model.objective(base)
    worst = 0.0
    for shift in itertools.product((-1, 0, 1), repeat=model.n):
        if not any(shift):
            continue
        q = []
        for d, s in enumerate(shift):
            j = best_idx[d] + s
            if not 0 <= j < len(axes[d]):
                break
            q.append(axes[d][j])
        else:
            q = np.array(q)
            vals = _grid_objectives(model, q[None, :], 0.0)
            if np.isfinite(vals[0]):
                worst = max(worst, abs(float(vals[0]) - f0))
    return worst


def grid_search(ch, order, scheme, cfg: SimConfig, levels: int) -> SolverResult:
    return grid_search_model(build_link_model(ch, order, scheme, cfg), cfg, levels)


def solve_model(model: LinkModel, scheme: SchemeKind, cfg: SimConfig) -> SolverResult:
    """Run the solver the scheme calls for on an already compiled model."""
    if scheme is SchemeKind.CFdbNomaSuboptimal:
        return sca(model, cfg)
    res = polyblock(model, cfg)
    if res.status == "budget_exhausted" and cfg.budget_fallback:
        res = _fallback(model, cfg, res)
    return res


def _fallback(model, cfg, pb: SolverResult) -> SolverResult:
    """Best of the polyblock incumbent, SCA from the default start, and SCA
    warm-started at the incumbent. The polyblock upper bound is kept in info."""
    candidates = [pb, sca(model, cfg)]
    if pb.feasible:
        candidates.append(sca(model, cfg, p0=pb.p))
    best = max((c for c in candidates if c.feasible), key=lambda c: c.objective_bps_hz, default=pb)
    ub = pb.trace[-1][1] if pb.trace else float("nan")
    log.info("polyblock budget exhausted (ub %.4f, incumbent %.4f); fallback value %.4f",
             ub, pb.objective_bps_hz, best.objective_bps_hz)
    out = SolverResult(best.p, best.objective_bps_hz, best.feasible, pb.iterations, pb.trace,
                       "budget_exhausted", best.solver, fallback=True)
    out.info.update(upper_bound=ub, polyblock_incumbent=pb.objective_bps_hz)
    return out


def evaluate_scheme(ch, order, scheme: SchemeKind, cfg: SimConfig) -> SolverResult:
    return solve_model(build_link_model(ch, order, scheme, cfg), scheme, cfg)
