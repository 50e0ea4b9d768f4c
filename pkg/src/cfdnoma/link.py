"""SINR and rate engine.

Users are indexed DL first (``0..n_dl-1``) then UL (``n_dl..n_dl+n_ul-1``),
and each user owns exactly one power variable at the same index: the RRH's
power on that DL user's stream, or the UL user's transmit power. Under every
scheme the SINR of user ``d`` has the form

    SINR_d(p) = a_d p_d / (n_d + sum_j B[d, j] p_j)

with ``B`` split into one non-negative matrix per interference category.
:class:`LinkModel` holds that compiled form and everything else reads it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import PowerAllocation, SchemeKind, SimConfig, power_violations
from .propagation import ChannelSet, Topology

COMPONENTS = ("i_dl_to_ul_w", "i_ul_to_dl_w", "i_dl_to_dl_w", "i_ul_to_ul_w", "i_self_w", "intra_noma_w")


@dataclass(frozen=True)
class SicOrder:
    """Per-cell user rankings, strongest channel first."""

    dl_rank: tuple  # dl_rank[c] = DL user indices, descending RRH->user gain
    ul_rank: tuple  # ul_rank[c] = UL user indices, descending user->RRH gain
    dl_cell: np.ndarray
    ul_cell: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.dl_rank)


def sic_order(ch: ChannelSet, topo: Topology) -> SicOrder:
    n_cells = ch.g_rrh_dl.shape[0]
    dl_rank, ul_rank = [], []
    for c in range(n_cells):
        dl = [k for k in range(topo.n_dl) if topo.dl_cell[k] == c]
        ul = [u for u in range(topo.n_ul) if topo.ul_cell[u] == c]
        dl_rank.append(tuple(sorted(dl, key=lambda k: (-ch.g_rrh_dl[c, k], k))))
        ul_rank.append(tuple(sorted(ul, key=lambda u: (-ch.g_ul_rrh[u, c], u))))
    return SicOrder(tuple(dl_rank), tuple(ul_rank), np.asarray(topo.dl_cell), np.asarray(topo.ul_cell))


@dataclass(frozen=True)
class LinkModel:
    n_dl: int
    n_ul: int
    cell: np.ndarray  # serving cell of each user
    signal_gain: np.ndarray  # a_d
    components: dict  # name -> (n, n) coefficient matrix
    noise: np.ndarray  # per-user noise power (W)
    weight: np.ndarray  # resource share w_d
    cap: np.ndarray  # per-variable power cap (W)
    groups: tuple  # ((indices, cap), ...) per-cell DL sum constraints
    scheme: SchemeKind

    @property
    def n(self) -> int:
        return self.n_dl + self.n_ul

    @property
    def B(self) -> np.ndarray:
        return self._total

    def __post_init__(self):
        total = np.zeros((self.n, self.n))
        for m in self.components.values():
            total = total + m
        object.__setattr__(self, "_total", total)

    # -- evaluation ------------------------------------------------------------
    def interference(self, p: np.ndarray) -> np.ndarray:
        return self._total @ p

    def sinr(self, p: np.ndarray) -> np.ndarray:
        return self.signal_gain * p / (self.noise + self._total @ p)

    def rates(self, p: np.ndarray) -> np.ndarray:
        return self.weight * np.log2(1.0 + self.sinr(p))

    def objective(self, p: np.ndarray) -> float:
        return float(np.sum(self.rates(p)))

    def z_upper(self) -> np.ndarray:
        """1 + SINR of each user at its own cap with every other power at zero."""
        return 1.0 + self.signal_gain * self.cap / self.noise

    def rate_floor(self, r_min: float) -> np.ndarray:
        """Smallest admissible 1 + SINR for a rate floor ``r_min``."""
        return 2.0 ** (r_min / self.weight)

    def violations(self, p: np.ndarray, rtol: float = 1e-9) -> list[str]:
        out = []
        if np.any(p < -1e-15):
            out.append("negative power")
        if np.any(p > self.cap * (1 + rtol)):
            out.append("power above cap")
        for idx, cap in self.groups:
            if p[list(idx)].sum() > cap * (1 + rtol):
                out.append("cell DL sum above cap")
        return out

    def project(self, p: np.ndarray) -> np.ndarray:
        """Clip to the box and scale each DL group down onto its sum cap."""
        q = np.clip(p, 0.0, self.cap)
        for idx, cap in self.groups:
            idx = list(idx)
            s = q[idx].sum()
            if s > cap:
                q[idx] *= cap / s
        return q

    def breakdown(self, p: np.ndarray) -> "SinrBreakdown":
        p = np.asarray(p, dtype=float)
        comps = {name: m @ p for name, m in self.components.items()}
        signal = self.signal_gain * p
        total = self.noise + sum(comps.values())
        sinr = signal / total
        return SinrBreakdown(
            signal_w=signal,
            noise_w=self.noise.copy(),
            sinr=sinr,
            rate_bps_hz=self.weight * np.log2(1.0 + sinr),
            weight=self.weight.copy(),
            **comps,
        )


@dataclass(frozen=True)
class SinrBreakdown:
    signal_w: np.ndarray
    noise_w: np.ndarray
    i_dl_to_ul_w: np.ndarray
    i_ul_to_dl_w: np.ndarray
    i_dl_to_dl_w: np.ndarray
    i_ul_to_ul_w: np.ndarray
    i_self_w: np.ndarray
    intra_noma_w: np.ndarray
    sinr: np.ndarray
    rate_bps_hz: np.ndarray
    weight: np.ndarray

    def interference_w(self) -> np.ndarray:
        return sum(getattr(self, name) for name in COMPONENTS)


def oma_subbands(order: SicOrder) -> int:
    return max([1] + [len(r) for r in order.dl_rank] + [len(r) for r in order.ul_rank])


def build_link_model(ch: ChannelSet, order: SicOrder, scheme: SchemeKind, cfg: SimConfig) -> LinkModel:
    n_cells = order.n_cells
    n_dl, n_ul = len(order.dl_cell), len(order.ul_cell)
    n = n_dl + n_ul
    comp = {name: np.zeros((n, n)) for name in COMPONENTS}
    a = np.zeros(n)
    cell = np.concatenate([order.dl_cell, order.ul_cell]).astype(int)
    kappa_si = cfg.kappa_si * ch.g_si
    kappa_eff = {"residual": cfg.kappa_du, "none": 1.0, "n/a": 0.0}[scheme.du_cancellation]
    fd = scheme.duplex_mode == "FD"
    oma = scheme.access_mode == "OMA"

    # OMA: the k-th ranked DL and UL users of every cell share subband k
    sub = np.zeros(n, dtype=int)
    for c in range(n_cells):
        for r, k in enumerate(order.dl_rank[c]):
            sub[k] = r
        for r, u in enumerate(order.ul_rank[c]):
            sub[n_dl + u] = r
    n_sub = oma_subbands(order) if oma else 1

    def same_band(i, j):
        return not oma or sub[i] == sub[j]

    for c in range(n_cells):
        ranked = order.dl_rank[c]
        for r, k in enumerate(ranked):
            a[k] = ch.g_rrh_dl[c, k]
            if not oma:
                for j in ranked[:r]:
                    comp["intra_noma_w"][k, j] = ch.g_rrh_dl[c, k]
            for j in range(n_dl):
                c2 = order.dl_cell[j]
                if c2 != c and same_band(k, j):
                    comp["i_dl_to_dl_w"][k, j] = ch.g_rrh_dl[c2, k]
            if fd:
                for u in range(n_ul):
                    if same_band(k, n_dl + u):
                        comp["i_ul_to_dl_w"][k, n_dl + u] = ch.g_ul_dl[u, k]
        ranked = order.ul_rank[c]
        for r, u in enumerate(ranked):
            d = n_dl + u
            a[d] = ch.g_ul_rrh[u, c]
            if not oma:
                for v in ranked[r + 1:]:
                    comp["intra_noma_w"][d, n_dl + v] = ch.g_ul_rrh[v, c]
            for v in range(n_ul):
                if order.ul_cell[v] != c and same_band(d, n_dl + v):
                    comp["i_ul_to_ul_w"][d, n_dl + v] = ch.g_ul_rrh[v, c]
            if fd:
                for j in range(n_dl):
                    if not same_band(d, j):
                        continue
                    c2 = order.dl_cell[j]
                    if c2 == c:
                        comp["i_self_w"][d, j] = kappa_si[c]
                    else:
                        comp["i_dl_to_ul_w"][d, j] = kappa_eff * ch.g_rrh_rrh[c2, c]

    noise = np.full(n, cfg.noise_w / n_sub)
    if oma:
        weight = np.full(n, 1.0 / n_sub)
    elif fd:
        weight = np.ones(n)
    else:
        weight = np.full(n, 0.5)
    cap = np.concatenate([np.full(n_dl, cfg.p_dl_max_w / n_sub), np.full(n_ul, cfg.p_ul_max_w)])
    groups = tuple(
        (tuple(int(k) for k in np.flatnonzero(order.dl_cell == c)), cfg.p_dl_max_w)
        for c in range(n_cells)
        if np.any(order.dl_cell == c)
    )
    for m in comp.values():
        m.setflags(write=False)
    return LinkModel(n_dl, n_ul, cell, a, comp, noise, weight, cap, groups, scheme)


def _vector(p) -> np.ndarray:
    return p.as_vector() if isinstance(p, PowerAllocation) else np.asarray(p, dtype=float)


def sinr_breakdown(p, ch: ChannelSet, order: SicOrder, scheme: SchemeKind, cfg: SimConfig) -> SinrBreakdown:
    model = build_link_model(ch, order, scheme, cfg)
    v = _vector(p)
    bad = model.violations(v)
    if isinstance(p, PowerAllocation):
        bad += power_violations(p, order.dl_cell, cfg)
    if bad:
        raise ValueError("power allocation outside the feasible set: " + "; ".join(bad))
    return model.breakdown(v)


def sum_throughput(p, ch, order, scheme, cfg) -> float:
    return float(np.sum(sinr_breakdown(p, ch, order, scheme, cfg).rate_bps_hz))


def rate_constraints_satisfied(p, ch, order, scheme, cfg, r_min=None):
    """Return (all users meet the floor within solver_tol, per-user slack in bits/s/Hz)."""
    r_min = cfg.r_min_bps_hz if r_min is None else r_min
    rates = sinr_breakdown(p, ch, order, scheme, cfg).rate_bps_hz
    slack = rates - r_min
    return bool(np.all(slack >= -cfg.solver_tol)), slack


def strict_decodability_rates(p, ch, order, scheme, cfg) -> np.ndarray:
    """Per-user rates when a DL message must also be decodable at every stronger co-user.

    The rank-r DL user's SINR becomes the minimum of its own SINR and the SINR
    of its message at each stronger-ranked receiver in the cell, where that
    receiver has already cancelled only the users weaker than rank r.
    Evaluation only; the solvers never call this.
    """
    if scheme.access_mode != "NOMA":
        raise ValueError("strict decodability applies to NOMA schemes only")
    model = build_link_model(ch, order, scheme, cfg)
    v = _vector(p)
    sinr = model.sinr(v)
    inter = model.interference(v) - model.components["intra_noma_w"] @ v
    for c, ranked in enumerate(order.dl_rank):
        for r, k in enumerate(ranked):
            stronger = list(ranked[:r])
            pk_stronger = v[stronger].sum()
            for j in stronger:
                g = ch.g_rrh_dl[c, j]
                cross = v[k] * g / (model.noise[j] + inter[j] + pk_stronger * g)
                sinr[k] = min(sinr[k], cross)
    return model.weight * np.log2(1.0 + sinr)


def write_breakdown_csv(bd: SinrBreakdown, order: SicOrder, fh) -> None:
    n_dl = len(order.dl_cell)
    rank = {}
    for ranking in (order.dl_rank, order.ul_rank):
        for c, ranked in enumerate(ranking):
            for r, k in enumerate(ranked):
                rank[(ranking is order.ul_rank, k)] = (c, r + 1)
    w = csv.writer(fh, lineterminator="\n")
    cols = ["signal_w", "noise_w", *COMPONENTS, "sinr", "rate_bps_hz"]
    w.writerow(["user", "direction", "cell", "rank", *cols])
    for d in range(len(bd.sinr)):
        ul = d >= n_dl
        idx = d - n_dl if ul else d
        c, r = rank[(ul, idx)]
        w.writerow([idx, "UL" if ul else "DL", c, r, *(f"{getattr(bd, col)[d]:.12g}" for col in cols)])
