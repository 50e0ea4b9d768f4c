import io

import numpy as np
import pytest

from cfdnoma.model import SimConfig
from cfdnoma.propagation import (
    build_channels,
    draw_fading_power,
    generate_drop,
    nearest,
    path_loss,
    read_drop,
    stream,
    uniform_in_disk,
    write_drop,
)


def test_drop_is_deterministic(table1):
    a, b = generate_drop(table1, 5), generate_drop(table1, 5)
    for name in ("rrh_positions", "dl_positions", "ul_positions", "dl_cell", "ul_cell"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.dl_positions, generate_drop(table1, 6).dl_positions)


def test_points_inside_disk(table1):
    for d in range(50):
        t = generate_drop(table1, d)
        pts = np.vstack([t.rrh_positions, t.dl_positions, t.ul_positions])
        assert np.all(np.hypot(pts[:, 0], pts[:, 1]) <= 300.0)
        diff = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        assert diff.max() <= 600.0


def test_mean_distance_from_origin():
    # uniform disk: E[r] = 2R/3
    cfg = SimConfig(n_cells=1, n_dl_users=1, n_ul_users=1)
    r = []
    for d in range(10_000):
        t = generate_drop(cfg, d)
        pts = np.vstack([t.rrh_positions, t.dl_positions, t.ul_positions])
        r.extend(np.hypot(pts[:, 0], pts[:, 1]))
    assert np.mean(r) == pytest.approx(200.0, rel=0.02)


def test_uniform_in_disk_radius_distribution():
    rng = np.random.default_rng(3)
    r = np.array([np.hypot(*uniform_in_disk(rng, 1.0)) for _ in range(20_000)])
    # P(r <= 1/2) = 1/4 for a uniform disk
    assert np.mean(r <= 0.5) == pytest.approx(0.25, abs=0.01)


def test_association_is_nearest(table1):
    for d in range(30):
        t = generate_drop(table1, d)
        for pts, cell in ((t.dl_positions, t.dl_cell), (t.ul_positions, t.ul_cell)):
            dist = np.linalg.norm(pts[:, None] - t.rrh_positions[None], axis=-1)
            assert np.all(dist[np.arange(len(pts)), cell] <= dist.min(axis=1))


def test_nearest_tie_goes_to_lowest_index():
    rrh = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert nearest(np.array([[0.0, 0.0], [0.0, 5.0]]), rrh).tolist() == [0, 0]


def test_min_distance_respected():
    cfg = SimConfig(min_distance_m=20.0)
    for d in range(20):
        t = generate_drop(cfg, d)
        users = np.vstack([t.dl_positions, t.ul_positions])
        dist = np.linalg.norm(users[:, None] - t.rrh_positions[None], axis=-1)
        assert dist.min() >= 20.0


@pytest.mark.parametrize("d, alpha, d_min, expected", [
    (1.0, 3.5, 1.0, 1.0),
    (10.0, 3.5, 1.0, 3.1623e-4),
    (0.1, 3.5, 1.0, 1.0),
])
def test_path_loss(d, alpha, d_min, expected):
    assert path_loss(d, alpha, d_min) == pytest.approx(expected, rel=1e-4)


def test_path_loss_exact_and_monotone():
    assert path_loss(10.0, 3.5) == pytest.approx(10 ** -3.5, rel=1e-8)
    d = np.linspace(1, 600, 500)
    assert np.all(np.diff(path_loss(d, 3.5)) < 0)


def test_fading_moments():
    x = draw_fading_power(np.random.default_rng(11), 1_000_000)
    assert np.all(x >= 0)
    assert x.mean() == pytest.approx(1.0, abs=0.01)
    assert x.var() == pytest.approx(1.0, abs=0.02)


def test_channels_deterministic_and_si(table1):
    t = generate_drop(table1, 2)
    a, b = build_channels(t, table1, 2), build_channels(t, table1, 2)
    for name in ("g_rrh_dl", "g_ul_rrh", "g_ul_dl", "g_rrh_rrh", "g_si"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(a.g_si, [1.0, 1.0])
    assert np.all(np.diag(a.g_rrh_rrh) == 0)
    assert a.g_rrh_rrh[0, 1] == a.g_rrh_rrh[1, 0]


def test_si_gain_setting():
    cfg = SimConfig(si_channel_gain_db=-10.0)
    ch = build_channels(generate_drop(cfg, 0), cfg, 0)
    assert np.all(ch.g_si == pytest.approx(0.1, rel=1e-15))


def test_no_fading_is_pure_path_loss(table1):
    t = generate_drop(table1, 4)
    ch = build_channels(t, table1, 4, fading=False)
    d = np.linalg.norm(t.rrh_positions[:, None] - t.dl_positions[None], axis=-1)
    assert np.allclose(ch.g_rrh_dl, path_loss(d, 3.5), rtol=1e-14)
    d = np.linalg.norm(t.ul_positions[:, None] - t.dl_positions[None], axis=-1)
    assert np.allclose(ch.g_ul_dl, path_loss(d, 3.5), rtol=1e-14)


def test_fading_factor_separates(table1):
    t = generate_drop(table1, 4)
    faded, flat = build_channels(t, table1, 4), build_channels(t, table1, 4, fading=False)
    ratio = faded.g_rrh_dl / flat.g_rrh_dl
    assert ratio[1, 2] == pytest.approx(draw_fading_power(stream(table1, 4, 10, 1, 2)), rel=1e-14)


def test_streams_independent_of_user_count():
    # adding users must not shift existing draws
    small = SimConfig(n_dl_users=2, n_ul_users=2)
    big = SimConfig(n_dl_users=4, n_ul_users=4)
    a, b = generate_drop(small, 9), generate_drop(big, 9)
    assert np.array_equal(a.rrh_positions, b.rrh_positions)
    assert np.array_equal(a.dl_positions, b.dl_positions[:2])


def test_drop_file_round_trip(table1):
    t = generate_drop(table1, 1)
    buf = io.StringIO()
    write_drop(t, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2 + 4 + 4
    assert lines[0].split()[0] == "rrh"
    back = read_drop(io.StringIO(buf.getvalue()))
    assert np.allclose(back.dl_positions, t.dl_positions, atol=1e-6)
    assert np.array_equal(back.ul_cell, t.ul_cell)
