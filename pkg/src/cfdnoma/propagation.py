"""Random drops and channel gains (distance path loss times Rayleigh power fading).

Every random quantity comes from its own numpy ``Generator`` keyed by
``(base_seed, drop_index, stream, ...)`` through ``SeedSequence.spawn_key``,
so a drop is reproducible in isolation and adding a link never shifts the
draws of another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SimConfig, db_to_linear

# stream identifiers inside a drop
_RRH, _DL, _UL = 0, 1, 2
_F_RRH_DL, _F_UL_RRH, _F_UL_DL, _F_RRH_RRH = 10, 11, 12, 13


def stream(cfg: SimConfig, drop_index: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=cfg.base_seed, spawn_key=(drop_index, *key))
    return np.random.Generator(np.random.PCG64(seq))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Topology:
    rrh_positions: np.ndarray  # (n_cells, 2)
    dl_positions: np.ndarray  # (n_dl, 2)
    ul_positions: np.ndarray  # (n_ul, 2)
    dl_cell: np.ndarray  # serving RRH of each DL user
    ul_cell: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.rrh_positions)

    @property
    def n_dl(self) -> int:
        return len(self.dl_positions)

    @property
    def n_ul(self) -> int:
        return len(self.ul_positions)


@dataclass(frozen=True)
class ChannelSet:
    """Linear power gains. ``g_rrh_rrh`` has a zero diagonal (no self link)."""

    g_rrh_dl: np.ndarray  # (n_cells, n_dl)
    g_ul_rrh: np.ndarray  # (n_ul, n_cells)
    g_ul_dl: np.ndarray  # (n_ul, n_dl)
    g_rrh_rrh: np.ndarray  # (n_cells, n_cells)
    g_si: np.ndarray  # (n_cells,)


def uniform_in_disk(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random())
    theta = 2.0 * np.pi * rng.random()
    return np.array([r * np.cos(theta), r * np.sin(theta)])


def _place(rng, radius, d_min, neighbours):
    while True:
        pt = uniform_in_disk(rng, radius)
        if not neighbours or min(np.hypot(*(pt - q)) for q in neighbours) >= d_min:
            return pt


def nearest(points: np.ndarray, rrh: np.ndarray) -> np.ndarray:
    """Index of the closest RRH for each point; ties go to the lowest index."""
    if len(points) == 0:
        return np.zeros(0, dtype=int)
    d = np.linalg.norm(points[:, None, :] - rrh[None, :, :], axis=-1)
    return np.argmin(d, axis=1)  # argmin returns the first minimum


def generate_drop(cfg: SimConfig, drop_index: int) -> Topology:
    R, dmin = cfg.area_radius_m, cfg.min_distance_m
    rrh = []
    for c in range(cfg.n_cells):
        rrh.append(_place(stream(cfg, drop_index, _RRH, c), R, dmin, rrh))
    dl = [_place(stream(cfg, drop_index, _DL, k), R, dmin, rrh) for k in range(cfg.n_dl_users)]
    ul = [_place(stream(cfg, drop_index, _UL, u), R, dmin, rrh + dl) for u in range(cfg.n_ul_users)]
    rrh, dl, ul = (np.array(x).reshape(-1, 2) for x in (rrh, dl, ul))
    dl_cell, ul_cell = nearest(dl, rrh), nearest(ul, rrh)
    dl_cell.setflags(write=False)
    ul_cell.setflags(write=False)
    return Topology(_frozen(rrh), _frozen(dl), _frozen(ul), dl_cell, ul_cell)


def path_loss(d, alpha: float, d_min: float = 1.0):
    return np.maximum(d, d_min) ** (-alpha)


def draw_fading_power(rng: np.random.Generator, size=None):
    """|h|^2 for h ~ CN(0, 1), i.e. an Exp(1) variate."""
    return rng.exponential(1.0, size=size)


def _distances(a, b):
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def build_channels(topo: Topology, cfg: SimConfig, drop_index: int, fading: bool = True) -> ChannelSet:
    """Gains for every propagated link; ``fading=False`` leaves pure path loss (test hook)."""
    alpha, dmin = cfg.pathloss_exponent, cfg.min_distance_m
    C, K, U = topo.n_cells, topo.n_dl, topo.n_ul

    def fade(*key):
        return draw_fading_power(stream(cfg, drop_index, *key)) if fading else 1.0

    g_rrh_dl = path_loss(_distances(topo.rrh_positions, topo.dl_positions), alpha, dmin)
    g_ul_rrh = path_loss(_distances(topo.ul_positions, topo.rrh_positions), alpha, dmin)
    g_ul_dl = path_loss(_distances(topo.ul_positions, topo.dl_positions), alpha, dmin)
    g_rrh_rrh = path_loss(_distances(topo.rrh_positions, topo.rrh_positions), alpha, dmin)
    for c in range(C):
        for k in range(K):
            g_rrh_dl[c, k] *= fade(_F_RRH_DL, c, k)
    for u in range(U):
        for c in range(C):
            g_ul_rrh[u, c] *= fade(_F_UL_RRH, u, c)
        for k in range(K):
            g_ul_dl[u, k] *= fade(_F_UL_DL, u, k)
    for c in range(C):
        g_rrh_rrh[c, c] = 0.0
        for c2 in range(c + 1, C):
            # reciprocal link: one draw per RRH pair
            f = fade(_F_RRH_RRH, c, c2)
            g_rrh_rrh[c, c2] *= f
            g_rrh_rrh[c2, c] *= f
    g_si = np.full(C, db_to_linear(cfg.si_channel_gain_db))
    return ChannelSet(*(_frozen(a) for a in (g_rrh_dl, g_ul_rrh, g_ul_dl, g_rrh_rrh, g_si)))


def write_drop(topo: Topology, fh) -> None:
    """One node per line: ``kind index x y cell``."""
    for c, (x, y) in enumerate(topo.rrh_positions):
        fh.write(f"rrh {c} {x:.6f} {y:.6f} {c}\n")
    for k, (x, y) in enumerate(topo.dl_positions):
        fh.write(f"dl {k} {x:.6f} {y:.6f} {int(topo.dl_cell[k])}\n")
    for u, (x, y) in enumerate(topo.ul_positions):
        fh.write(f"ul {u} {x:.6f} {y:.6f} {int(topo.ul_cell[u])}\n")


def read_drop(fh) -> Topology:
    rows = {"rrh": [], "dl": [], "ul": []}
    for line in fh:
        if not line.strip():
            continue
        kind, idx, x, y, cell = line.split()
        rows[kind].append((int(idx), float(x), float(y), int(cell)))
    arr = {k: sorted(v) for k, v in rows.items()}
    pos = {k: np.array([[r[1], r[2]] for r in v]).reshape(-1, 2) for k, v in arr.items()}
    cell = {k: np.array([r[3] for r in v], dtype=int) for k, v in arr.items()}
    return Topology(_frozen(pos["rrh"]), _frozen(pos["dl"]), _frozen(pos["ul"]), cell["dl"], cell["ul"])
