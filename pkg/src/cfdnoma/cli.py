"""Command-line entry point.

    cfdnoma run fig5a.cfg --set n_drops=10 --out fig5a.csv
    cfdnoma verify
    cfdnoma dump-drop --drop 3 --out drop3.txt --breakdown drop3.csv
    cfdnoma solve --scheme FdbNoma --trace trace.csv

Exit codes: 0 ok, 1 verify failure, 2 bad config, 3 infeasible at every
sweep point, 4 polyblock budget exhausted with the fallback disabled.
The only environment variable read is CFDNOMA_LOG_LEVEL.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import bench, experiment, link, model, monotonic, propagation, sca
from .model import ConfigFileError, SchemeKind, SimConfig

log = logging.getLogger("cfdnoma")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_BUDGET = 0, 1, 2, 3, 4
LOG_ENV = "CFDNOMA_LOG_LEVEL"


def bundled_config(name: str) -> Path | None:
    """Path of a config shipped with the package (``fig5a.cfg`` or ``fig5a``)."""
    if not name.endswith(".cfg"):
        name += ".cfg"
    ref = resources.files("cfdnoma") / "configs" / name
    return Path(str(ref)) if ref.is_file() else None


def resolve_config(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if p.exists():
        return p
    return bundled_config(p.name) if p.parent == Path(".") else p


def _load(args) -> SimConfig:
    """Config from file plus --set overrides; raises ConfigFileError on any problem."""
    path = resolve_config(getattr(args, "config", None))
    if path is not None and not path.is_file():
        raise ConfigFileError(f"config file not found: {args.config}")
    try:
        cfg = model.load_config(path, args.set or ())
    except TypeError as exc:
        raise ConfigFileError(str(exc)) from None
    errors = model.validate_config(cfg)
    if errors:
        raise ConfigFileError("invalid config: " + "; ".join(str(e) for e in errors))
    return cfg


def _open_out(path):
    return open(path, "w", newline="") if path and path != "-" else None


# -- run ----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load(args)
    spec = experiment.SweepSpec.from_config(cfg)
    result = experiment.run_sweep(spec, cfg, workers=args.workers)
    text = result.to_csv()
    if args.out and args.out != "-":
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if result.n_fallback:
        print(f"note: {result.n_fallback} solve(s) exhausted the vertex budget and used the SCA fallback",
              file=sys.stderr)
    if all(r.n_feasible == 0 for r in result.rows):
        print("error: every sweep point is infeasible for every drop", file=sys.stderr)
        return EXIT_INFEASIBLE
    if result.n_budget_exhausted > result.n_fallback:
        n = result.n_budget_exhausted - result.n_fallback
        print(f"error: {n} polyblock solve(s) exhausted vertex_budget={cfg.vertex_budget}", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


# -- dump-drop / solve ----------------------------------------------------------

def _drop(cfg, index):
    topo = propagation.generate_drop(cfg, index)
    ch = propagation.build_channels(topo, cfg, index)
    return topo, ch, link.sic_order(ch, topo)


def cmd_dump_drop(args) -> int:
    cfg = _load(args)
    topo, ch, order = _drop(cfg, args.drop)
    fh = _open_out(args.out)
    propagation.write_drop(topo, fh or sys.stdout)
    if fh:
        fh.close()
    if args.breakdown:
        scheme = cfg.scheme
        res = bench.evaluate_scheme(ch, order, scheme, cfg)
        bd = link.sinr_breakdown(res.p, ch, order, scheme, cfg)
        with open(args.breakdown, "w", newline="") as out:
            link.write_breakdown_csv(bd, order, out)
    return EXIT_OK


POLYBLOCK_TRACE = ["iter", "upper_bound", "cbv", "n_vertices"]
SCA_TRACE = ["iter", "objective", "step_norm", "kkt_residual"]


def cmd_solve(args) -> int:
    """Solve one drop with the configured scheme and print the allocation."""
    cfg = _load(args)
    _, ch, order = _drop(cfg, args.drop)
    res = bench.evaluate_scheme(ch, order, cfg.scheme, cfg)
    print(f"scheme {cfg.scheme.value} solver {res.solver} status {res.status} "
          f"feasible {res.feasible} iterations {res.iterations}")
    print(f"sum throughput {res.objective_bps_hz:.10g} bits/s/Hz")
    for k, p in enumerate(res.p.dl_power_w):
        print(f"dl {k} {p:.6e} W")
    for u, p in enumerate(res.p.ul_power_w):
        print(f"ul {u} {p:.6e} W")
    if args.trace:
        cols = SCA_TRACE if cfg.scheme is SchemeKind.CFdbNomaSuboptimal else POLYBLOCK_TRACE
        with open(args.trace, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in res.trace:
                w.writerow([f"{x:.10g}" if isinstance(x, float) else x for x in row])
    if not res.feasible:
        return EXIT_INFEASIBLE
    if res.status == "budget_exhausted" and not res.fallback:
        return EXIT_BUDGET
    return EXIT_OK


# -- verify -------------------------------------------------------------------

def _small_cfg(**kw) -> SimConfig:
    base = dict(n_cells=1, n_dl_users=1, n_ul_users=1, base_seed=7)
    base.update(kw)
    return SimConfig(**base)


def _channels(cfg, drop, corrupt):
    topo, ch, order = _drop(cfg, drop)
    if corrupt:
        ch = dataclasses.replace(ch, g_rrh_dl=-ch.g_rrh_dl)
    return topo, ch, order


def check_gains(corrupt=False) -> str:
    cfg = SimConfig(base_seed=11)
    for d in range(5):
        _, ch, _ = _channels(cfg, d, corrupt)
        for name in ("g_rrh_dl", "g_ul_rrh", "g_ul_dl", "g_rrh_rrh"):
            g = getattr(ch, name)
            if not np.all(np.isfinite(g)) or np.any(g < 0):
                raise AssertionError(f"drop {d}: {name} has negative or non-finite entries")
    return "all gains finite and non-negative"


def check_breakdown(corrupt=False) -> str:
    cfg = SimConfig(base_seed=12)
    rng = np.random.default_rng(0)
    for d in range(3):
        _, ch, order = _channels(cfg, d, corrupt)
        for scheme in model.ALL_SCHEMES:
            m = link.build_link_model(ch, order, scheme, cfg)
            p = m.project(rng.random(m.n) * m.cap)
            bd = m.breakdown(p)
            if np.any(bd.sinr < 0) or np.any(bd.interference_w() < 0):
                raise AssertionError(f"drop {d} {scheme.value}: negative SINR or interference")
            tot = bd.noise_w + bd.interference_w()
            if not np.allclose(bd.sinr * tot, bd.signal_w, rtol=1e-12, atol=0):
                raise AssertionError(f"drop {d} {scheme.value}: SINR is not signal over noise plus interference")
    return "SINR components conserve and stay non-negative"


def check_oracle(corrupt=False) -> str:
    cfg = _small_cfg(base_seed=13)
    worst = 0.0
    for d in range(4):
        _, ch, order = _channels(cfg, d, corrupt)
        pb = monotonic.solve_polyblock(ch, order, SchemeKind.CFdbNomaOptimal, cfg)
        gr = bench.grid_search(ch, order, SchemeKind.CFdbNomaOptimal, cfg, 64)
        gap = gr.objective_bps_hz - pb.objective_bps_hz
        allowed = cfg.solver_tol + gr.info.get("grid_step_bps_hz", 0.0)
        if not math.isfinite(pb.objective_bps_hz) or gap > allowed:
            raise AssertionError(f"drop {d}: grid beats polyblock by {gap:.3g} > {allowed:.3g}")
        worst = max(worst, gap)
    return f"polyblock within tolerance of the grid (worst gap {worst:.2e})"


def check_scheme_equivalence(corrupt=False) -> str:
    cfg = SimConfig(base_seed=14, kappa_du_db=0.0, vertex_budget=3000)
    worst = 0.0
    for d in range(2):
        _, ch, order = _channels(cfg, d, corrupt)
        a = link.build_link_model(ch, order, SchemeKind.CFdbNomaOptimal, cfg)
        b = link.build_link_model(ch, order, SchemeKind.FdbNoma, cfg)
        p = a.project(0.3 * a.cap)
        worst = max(worst, abs(a.objective(p) - b.objective(p)))
    if worst > 1e-9:
        raise AssertionError(f"kappa_DU = 1 differs from no cancellation by {worst:.3g}")
    return "kappa_DU = 1 reproduces the uncancelled scheme"


def check_surrogate(corrupt=False) -> str:
    cfg = SimConfig(base_seed=15)
    rng = np.random.default_rng(1)
    _, ch, order = _channels(cfg, 0, corrupt)
    m = link.build_link_model(ch, order, SchemeKind.CFdbNomaOptimal, cfg)
    for _ in range(50):
        pt = m.project(rng.random(m.n) * m.cap)
        s = sca.build_surrogate(pt, m)
        if abs(s.value(pt) - m.objective(pt)) > 1e-9:
            raise AssertionError("surrogate is not tangent at the expansion point")
        q = m.project(rng.random(m.n) * m.cap)
        if s.value(q) > m.objective(q) + 1e-9:
            raise AssertionError("surrogate exceeds the objective")
    return "surrogate tangent and below the objective"


def check_sca(corrupt=False) -> str:
    cfg = _small_cfg(base_seed=16, n_dl_users=2)
    for d in range(3):
        _, ch, order = _channels(cfg, d, corrupt)
        pb = monotonic.solve_polyblock(ch, order, SchemeKind.CFdbNomaOptimal, cfg)
        sc = sca.solve_sca(ch, order, SchemeKind.CFdbNomaSuboptimal, cfg)
        if sc.objective_bps_hz > pb.objective_bps_hz + cfg.solver_tol:
            raise AssertionError(f"drop {d}: SCA {sc.objective_bps_hz:.6g} above the global optimum "
                                 f"{pb.objective_bps_hz:.6g}")
    return "SCA never beats the global solver"


CHECKS = [
    ("gains", check_gains),
    ("breakdown", check_breakdown),
    ("oracle", check_oracle),
    ("kappa_du", check_scheme_equivalence),
    ("surrogate", check_surrogate),
    ("sca_bound", check_sca),
]


def run_checks(corrupt_gain_sign: bool = False, out=None) -> bool:
    out = out or sys.stdout
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            with np.errstate(invalid="ignore", divide="ignore"):
                detail, passed = fn(corrupt_gain_sign), True
        except Exception as exc:  # a crash counts as a failed check
            detail, passed = f"{type(exc).__name__}: {exc}", False
        ok &= passed
        out.write(f"{'PASS' if passed else 'FAIL'}  {name:<10} {time.perf_counter() - t0:6.2f}s  {detail}\n")
    return ok


def cmd_verify(args) -> int:
    return EXIT_OK if run_checks(args.corrupt_gain_sign) else EXIT_VERIFY


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfdnoma", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p, positional=True):
        if positional:
            p.add_argument("config", nargs="?", help="config file, or the name of a bundled one (fig5a, fig5b)")
        else:
            p.add_argument("--config", help="config file or bundled name")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")

    run = sub.add_parser("run", help="run the configured sweep and write the CSV")
    with_config(run)
    run.add_argument("--out", help="output CSV (default stdout)")
    run.add_argument("--workers", type=int, default=None, help="worker processes (default: available cores)")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="fast self-checks with a pass/fail table")
    ver.add_argument("--corrupt-gain-sign", action="store_true", help=argparse.SUPPRESS)
    ver.add_argument("--set", action="append", help=argparse.SUPPRESS)
    ver.set_defaults(func=cmd_verify)

    dump = sub.add_parser("dump-drop", help="write one drop's node file and optionally its SINR breakdown")
    with_config(dump, positional=False)
    dump.add_argument("--drop", type=int, default=0)
    dump.add_argument("--out", help="node file (default stdout)")
    dump.add_argument("--breakdown", help="SINR breakdown CSV for the configured scheme's solution")
    dump.set_defaults(func=cmd_dump_drop)

    sol = sub.add_parser("solve", help="solve one drop with the configured scheme")
    with_config(sol, positional=False)
    sol.add_argument("--drop", type=int, default=0)
    sol.add_argument("--trace", help="write the solver trace CSV here")
    sol.set_defaults(func=cmd_solve)
    return ap


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
