import numpy as np
import pytest

from cfdnoma.link import sic_order
from cfdnoma.model import SimConfig
from cfdnoma.propagation import ChannelSet, Topology, build_channels, generate_drop


def frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def hand_instance(g_rrh_dl, g_ul_rrh, g_ul_dl, g_rrh_rrh, dl_cell, ul_cell, g_si=None):
    """ChannelSet + SicOrder from explicit gains (positions are irrelevant to the link model)."""
    g_rrh_dl = np.atleast_2d(np.asarray(g_rrh_dl, dtype=float))
    n_cells, n_dl = g_rrh_dl.shape
    g_ul_rrh = np.asarray(g_ul_rrh, dtype=float).reshape(-1, n_cells)
    n_ul = len(g_ul_rrh)
    g_ul_dl = np.asarray(g_ul_dl, dtype=float).reshape(n_ul, n_dl)
    g_si = np.ones(n_cells) if g_si is None else np.asarray(g_si, dtype=float)
    ch = ChannelSet(frozen(g_rrh_dl), frozen(g_ul_rrh), frozen(g_ul_dl),
                    frozen(np.asarray(g_rrh_rrh, dtype=float).reshape(n_cells, n_cells)), frozen(g_si))
    topo = Topology(frozen(np.zeros((n_cells, 2))), frozen(np.zeros((n_dl, 2))), frozen(np.zeros((n_ul, 2))),
                    np.asarray(dl_cell, dtype=int), np.asarray(ul_cell, dtype=int))
    return ch, sic_order(ch, topo)


def seeded(cfg, drop):
    topo = generate_drop(cfg, drop)
    ch = build_channels(topo, cfg, drop)
    return topo, ch, sic_order(ch, topo)


@pytest.fixture
def table1():
    return SimConfig()


@pytest.fixture
def one_cell():
    return SimConfig(n_cells=1, n_dl_users=1, n_ul_users=1, base_seed=101)
