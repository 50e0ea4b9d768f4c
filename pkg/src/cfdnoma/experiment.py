"""Monte Carlo sweeps over paired drops.

Every drop is generated once and then evaluated for every sweep value and
every scheme, so all curves share the same node locations and fading.
Drops run in worker processes; results are merged in drop-index order.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bench import solve_model
from .link import build_link_model, sic_order, strict_decodability_rates
from .model import ALL_SCHEMES, SchemeKind, SimConfig
from .propagation import build_channels, generate_drop

log = logging.getLogger(__name__)

HALF_POWER_DB = 10.0 * math.log10(2.0)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    schemes: tuple = ALL_SCHEMES
    n_drops: int = 50
    overrides: dict = field(default_factory=dict)
    continuation: bool = True

    def __post_init__(self):
        if self.variable not in ("snr_ratio_db", "kappa_si_db"):
            raise ValueError(f"cannot sweep {self.variable!r}")
        vals = list(self.values)
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.n_drops < 1:
            raise ValueError("n_drops must be >= 1")

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "SweepSpec":
        return cls(cfg.sweep_var, tuple(cfg.sweep_values), tuple(cfg.schemes), cfg.n_drops,
                   continuation=cfg.sweep_continuation)


FIG5A = SweepSpec(
    "snr_ratio_db", (60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0),
    overrides={"ul_power_rule": "half_dl", "r_min_bps_hz": 0.0},
)
FIG5B = SweepSpec(
    "kappa_si_db", (-130.0, -120.0, -110.0, -100.0, -90.0, -80.0, -70.0, -60.0),
    overrides={"snr_ratio_db": 90.0, "r_min_bps_hz": 0.02},
)


def point_config(cfg: SimConfig, variable: str, value: float) -> SimConfig:
    """Config for one sweep point, applying the UL power rule."""
    out = cfg.replace(**{variable: float(value)})
    if out.ul_power_rule == "half_dl":
        out = out.replace(p_ul_max_dbm=out.p_dl_max_dbm - HALF_POWER_DB)
    return out


@dataclass(frozen=True)
class Outcome:
    objective: float
    feasible: bool
    iterations: int
    budget_exhausted: bool
    fallback: bool
    continued: bool = False


@dataclass
class _Point:
    model: object
    cfg: SimConfig
    result: object
    p: np.ndarray | None
    objective: float
    continued: bool = False


FLOOR_TOL = 1e-9  # solvers return floor-tight users a few ulps under r_min


def _admissible(model, p, r_min) -> bool:
    return not model.violations(p) and bool(np.all(model.rates(p) >= r_min - FLOOR_TOL))


def _continue(points) -> None:
    """Offer each sweep point its neighbours' allocations, forward then backward.

    Along either sweep axis the feasible sets are nested and the objective is
    ordered pointwise, so a neighbour's allocation is often admissible and can
    only tighten an inexact solve. A candidate is kept only if it meets every
    cap and rate floor of this point and scores strictly higher.
    """
    n = len(points)
    for i, j in [(i, i - 1) for i in range(1, n)] + [(i, i + 1) for i in range(n - 2, -1, -1)]:
        here, there = points[i], points[j]
        if there.p is None or not _admissible(here.model, there.p, here.cfg.r_min_bps_hz):
            continue
        val = here.model.objective(there.p)
        if here.p is None or val > here.objective:
            here.p, here.objective, here.continued = there.p.copy(), val, True


def _outcome(pt: _Point, ch, order, scheme) -> Outcome:
    res = pt.result
    feasible = pt.p is not None
    obj = pt.objective if feasible else res.objective_bps_hz
    if pt.cfg.strict_decodability and scheme.access_mode == "NOMA" and feasible:
        obj = float(np.sum(strict_decodability_rates(pt.p, ch, order, scheme, pt.cfg)))
    return Outcome(obj, feasible, res.iterations, res.status == "budget_exhausted", res.fallback, pt.continued)


def run_drop(cfg: SimConfig, drop_index: int, schemes=None) -> dict:
    """Solve every scheme on one realisation; returns {scheme: SolverResult}."""
    schemes = tuple(cfg.schemes if schemes is None else schemes)
    topo = generate_drop(cfg, drop_index)
    ch = build_channels(topo, cfg, drop_index)
    order = sic_order(ch, topo)
    return {s: solve_model(build_link_model(ch, order, s, cfg), s, cfg) for s in schemes}


def _sweep_drop(args):
    cfg, spec, drop_index = args
    topo = generate_drop(cfg, drop_index)
    ch = build_channels(topo, cfg, drop_index)
    order = sic_order(ch, topo)
    cfgs = [point_config(cfg, spec.variable, v) for v in spec.values]
    out = [[None] * len(spec.schemes) for _ in spec.values]
    for si, scheme in enumerate(spec.schemes):
        points = []
        for pcfg in cfgs:
            model = build_link_model(ch, order, scheme, pcfg)
            res = solve_model(model, scheme, pcfg)
            p = res.p.as_vector() if res.feasible else None
            points.append(_Point(model, pcfg, res, p, res.objective_bps_hz))
        if spec.continuation:
            _continue(points)
        for vi, pt in enumerate(points):
            out[vi][si] = _outcome(pt, ch, order, scheme)
    return out


@dataclass(frozen=True)
class SweepRow:
    scheme: SchemeKind
    sweep_var: str
    sweep_value_db: float
    mean_tput: float
    stderr: float
    n_feasible: int
    mean_iters: float
    n_budget_exhausted: int = 0
    n_fallback: int = 0
    n_continued: int = 0


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    per_drop: dict  # (scheme, value) -> array of objectives, NaN where infeasible

    def row(self, scheme: SchemeKind, value: float) -> SweepRow:
        for r in self.rows:
            if r.scheme is scheme and r.sweep_value_db == value:
                return r
        raise KeyError((scheme, value))

    def series(self, scheme: SchemeKind) -> np.ndarray:
        return np.array([self.row(scheme, v).mean_tput for v in self.spec.values])

    @property
    def n_budget_exhausted(self) -> int:
        return sum(r.n_budget_exhausted for r in self.rows)

    @property
    def n_fallback(self) -> int:
        return sum(r.n_fallback for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_sweep_csv(self, buf)
        return buf.getvalue()


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_sweep(spec: SweepSpec, cfg: SimConfig, workers: int | None = 1) -> SweepResult:
    cfg = cfg.replace(**spec.overrides) if spec.overrides else cfg
    workers = default_workers() if workers is None else max(1, workers)
    tasks = [(cfg, spec, d) for d in range(spec.n_drops)]
    if workers == 1 or spec.n_drops == 1:
        per_drop = [_sweep_drop(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_drop = list(pool.map(_sweep_drop, tasks, chunksize=1))
    return aggregate(spec, per_drop)


def aggregate(spec: SweepSpec, per_drop: list) -> SweepResult:
    rows, raw = [], {}
    for si, scheme in enumerate(spec.schemes):
        for vi, value in enumerate(spec.values):
            outs = [drop[vi][si] for drop in per_drop]
            vals = np.array([o.objective if o.feasible else np.nan for o in outs])
            raw[(scheme, value)] = vals
            ok = [o for o in outs if o.feasible]
            n = len(ok)
            if n:
                x = np.array([o.objective for o in ok])
                mean = float(x.mean())
                stderr = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
                iters = float(np.mean([o.iterations for o in ok]))
            else:
                mean = stderr = iters = float("nan")
            rows.append(SweepRow(scheme, spec.variable, float(value), mean, stderr, n, iters,
                                 sum(o.budget_exhausted for o in outs), sum(o.fallback for o in outs),
                                 sum(o.continued for o in outs)))
    return SweepResult(spec, rows, raw)


CSV_HEADER = ["scheme", "sweep_var", "sweep_value_db", "mean_tput", "stderr", "n_feasible", "mean_iters"]


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.10g}"


def write_sweep_csv(result: SweepResult, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow([r.scheme.value, r.sweep_var, _fmt(r.sweep_value_db), _fmt(r.mean_tput), _fmt(r.stderr),
                    r.n_feasible, _fmt(r.mean_iters)])


def read_sweep_csv(fh) -> list[dict]:
    rows = []
    for rec in csv.DictReader(fh):
        rows.append({
            "scheme": SchemeKind.parse(rec["scheme"]),
            "sweep_var": rec["sweep_var"],
            "sweep_value_db": float(rec["sweep_value_db"]),
            "mean_tput": float(rec["mean_tput"]),
            "stderr": float(rec["stderr"]),
            "n_feasible": int(rec["n_feasible"]),
            "mean_iters": float(rec["mean_iters"]),
        })
    return rows
