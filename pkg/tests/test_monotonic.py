import itertools

import numpy as np
import pytest
from conftest import hand_instance, seeded

from cfdnoma.bench import grid_levels, grid_search
from cfdnoma.link import build_link_model, sum_throughput
from cfdnoma.model import SchemeKind, SimConfig
from cfdnoma.monotonic import (
    _reachable,
    fixed_point_iteration,
    minimal_power,
    polyblock,
    project_to_boundary,
    sinr_targets_feasible,
    solve_polyblock,
    targets_feasible,
)

OPT = SchemeKind.CFdbNomaOptimal


def two_cell_small():
    return SimConfig(n_dl_users=2, n_ul_users=2, base_seed=303)


def test_zero_targets_feasible_at_zero(table1):
    _, ch, order = seeded(table1, 0)
    p = sinr_targets_feasible(np.zeros(8), ch, order, OPT, table1)
    assert np.all(p.as_vector() == 0)


def test_isolated_link_closed_form():
    cfg = SimConfig(n_cells=1, n_dl_users=1, n_ul_users=1)
    g = 2e-8
    ch, order = hand_instance([[g]], np.zeros((0, 1)), np.zeros((0, 1)), [[0]], [0], [])
    p = sinr_targets_feasible(np.array([3.0]), ch, order, OPT, cfg)
    assert p.dl_power_w[0] == pytest.approx(3.0 * cfg.noise_w / g, rel=1e-14)


def test_direct_solve_matches_fixed_point(table1):
    rng = np.random.default_rng(0)
    agree = 0
    for d in range(10):
        _, ch, order = seeded(table1, d)
        for scheme in (OPT, SchemeKind.FdbOma, SchemeKind.HdbNoma):
            m = build_link_model(ch, order, scheme, table1)
            sinr = m.sinr(m.project(rng.random(m.n) * m.cap))
            for scale in (0.5, 0.99, 1.5):
                gamma = scale * sinr
                direct = targets_feasible(gamma, m)
                status, p = fixed_point_iteration(gamma, m)
                if status == "undecided":
                    continue
                assert (direct is not None) == (status == "feasible")
                if direct is not None:
                    assert np.allclose(direct, p, rtol=1e-6)
                agree += 1
    assert agree > 60


def test_minimal_power_meets_targets_exactly(table1):
    _, ch, order = seeded(table1, 3)
    m = build_link_model(ch, order, OPT, table1)
    p = m.project(0.3 * m.cap)
    gamma = 0.8 * m.sinr(p)
    pmin = minimal_power(gamma, m)
    assert np.allclose(m.sinr(pmin), gamma, rtol=1e-9)
    assert np.all(pmin <= p * (1 + 1e-9))  # componentwise minimal


def test_oracle_agrees_with_grid():
    cfg = SimConfig(n_dl_users=2, n_ul_users=2, base_seed=17)
    rng = np.random.default_rng(1)
    checked = {"feasible": 0, "infeasible": 0}
    for d in range(6):
        _, ch, order = seeded(cfg, d)
        m = build_link_model(ch, order, OPT, cfg)
        axes = [grid_levels(c, 32) for c in m.cap]
        P = np.array(list(itertools.product(*axes)))
        ok = np.ones(len(P), dtype=bool)
        for idx, cap in m.groups:
            ok &= P[:, list(idx)].sum(axis=1) <= cap * (1 + 1e-12)
        P = P[ok]
        S = m.signal_gain * P / (m.noise + P @ m.B.T)
        for _ in range(8):
            ref = S[rng.integers(len(S))]
            gamma = ref * rng.uniform(0.3, 3.0, m.n)
            grid_ok = bool(np.any(np.all(S >= gamma, axis=1)))
            oracle_ok = targets_feasible(gamma, m) is not None
            if grid_ok:
                assert oracle_ok
            if not oracle_ok:
                assert not grid_ok
            checked["feasible" if oracle_ok else "infeasible"] += 1
    assert min(checked.values()) > 0


def test_projection_cases(table1):
    _, ch, order = seeded(table1, 2)
    m = build_link_model(ch, order, OPT, table1)
    anchor = np.ones(m.n)
    inside = 1.0 + 0.5 * m.sinr(m.project(0.2 * m.cap))
    pr = project_to_boundary(inside, anchor, m)
    assert pr.lam_lo == 1.0 and np.array_equal(pr.y_lo, inside)
    pr = project_to_boundary(anchor, anchor, m)
    assert np.array_equal(pr.y_lo, anchor)


def test_projection_sandwich(table1):
    for d in range(5):
        _, ch, order = seeded(table1, d)
        m = build_link_model(ch, order, OPT, table1)
        anchor = 0.5 * np.ones(m.n)
        pr = project_to_boundary(m.z_upper(), anchor, m)
        assert pr.lam_hi - pr.lam_lo <= 1e-6
        direction = m.z_upper() - anchor
        assert _reachable(anchor + pr.lam_lo * direction, m) is not None
        assert _reachable(anchor + pr.lam_hi * direction, m) is None
        # the returned powers achieve y_lo
        assert np.all(1 + m.sinr(pr.p) >= pr.y_lo * (1 - 1e-9))


def test_single_user_full_power():
    cfg = SimConfig(n_cells=1, n_dl_users=1, n_ul_users=1)
    g = 1e-8
    ch, order = hand_instance([[g]], np.zeros((0, 1)), np.zeros((0, 1)), [[0]], [0], [])
    res = solve_polyblock(ch, order, OPT, cfg)
    assert res.p.dl_power_w[0] == pytest.approx(cfg.p_dl_max_w)
    assert res.objective_bps_hz == pytest.approx(np.log2(1 + cfg.p_dl_max_w * g / cfg.noise_w))


@pytest.mark.parametrize("drop", range(6))
def test_polyblock_matches_64_grid(one_cell, drop):
    _, ch, order = seeded(one_cell, drop)
    pb = solve_polyblock(ch, order, OPT, one_cell)
    grid = grid_search(ch, order, OPT, one_cell, 64)
    assert pb.status == "converged"
    assert grid.objective_bps_hz <= pb.objective_bps_hz + one_cell.solver_tol
    assert pb.objective_bps_hz <= grid.objective_bps_hz + one_cell.solver_tol + grid.info["grid_step_bps_hz"]


@pytest.mark.parametrize("drop", range(4))
def test_trace_contract_and_soundness(one_cell, drop):
    cfg = one_cell.replace(n_dl_users=2)
    _, ch, order = seeded(cfg, drop)
    res = solve_polyblock(ch, order, OPT, cfg)
    ub = np.array([t[1] for t in res.trace])
    cbv = np.array([t[2] for t in res.trace])
    assert np.all(np.diff(ub) <= 1e-12)
    assert np.all(np.diff(cbv) >= -1e-12)
    assert ub[-1] - cbv[-1] <= cfg.solver_tol
    grid = grid_search(ch, order, OPT, cfg, 48)
    # every upper bound stays above the best grid point
    assert np.all(ub >= grid.objective_bps_hz - 1e-9)


def test_objective_consistency(one_cell):
    _, ch, order = seeded(one_cell.replace(n_dl_users=2), 1)
    cfg = one_cell.replace(n_dl_users=2)
    res = solve_polyblock(ch, order, OPT, cfg)
    assert res.objective_bps_hz == pytest.approx(sum_throughput(res.p, ch, order, OPT, cfg), abs=1e-9)


def test_rate_floor_honoured():
    cfg = SimConfig(n_cells=1, n_dl_users=2, n_ul_users=1, base_seed=5, r_min_bps_hz=0.5)
    for d in range(4):
        _, ch, order = seeded(cfg, d)
        m = build_link_model(ch, order, OPT, cfg)
        res = polyblock(m, cfg)
        if res.feasible:
            assert np.all(m.rates(res.p.as_vector()) >= cfg.r_min_bps_hz - 1e-9)


def test_infeasible_rate_floor():
    cfg = SimConfig(n_cells=1, n_dl_users=2, n_ul_users=1, r_min_bps_hz=40.0)
    _, ch, order = seeded(cfg, 0)
    res = solve_polyblock(ch, order, OPT, cfg)
    assert not res.feasible and res.status == "infeasible"


def test_budget_exhaustion_surfaces(table1):
    _, ch, order = seeded(table1, 0)
    res = solve_polyblock(ch, order, OPT, table1.replace(vertex_budget=50))
    assert res.status == "budget_exhausted" and res.feasible


def test_relabel_invariance():
    cfg = SimConfig(n_cells=1, n_dl_users=2, n_ul_users=1)
    g = np.array([[3e-7, 8e-8]])
    gu = np.array([[2e-7]])
    gud = np.array([[1e-6, 4e-6]])
    ch_a, ord_a = hand_instance(g, gu, gud, [[0]], [0, 0], [0])
    ch_b, ord_b = hand_instance(g[:, ::-1], gu, gud[:, ::-1], [[0]], [0, 0], [0])
    a = solve_polyblock(ch_a, ord_a, OPT, cfg)
    b = solve_polyblock(ch_b, ord_b, OPT, cfg)
    assert a.objective_bps_hz == pytest.approx(b.objective_bps_hz, abs=cfg.solver_tol)
    assert np.allclose(a.p.dl_power_w, b.p.dl_power_w[::-1], rtol=1e-2, atol=1e-6)


def test_deterministic(one_cell):
    _, ch, order = seeded(one_cell.replace(n_dl_users=2), 2)
    cfg = one_cell.replace(n_dl_users=2)
    a, b = solve_polyblock(ch, order, OPT, cfg), solve_polyblock(ch, order, OPT, cfg)
    assert a.trace == b.trace and np.array_equal(a.p.as_vector(), b.p.as_vector())
