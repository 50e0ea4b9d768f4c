"""Shared domain types: configuration, schemes, power allocations, solver results."""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class SchemeKind(enum.Enum):
    CFdbNomaOptimal = "CFdbNomaOptimal"
    CFdbNomaSuboptimal = "CFdbNomaSuboptimal"
    FdbNoma = "FdbNoma"
    FdbOma = "FdbOma"
    HdbNoma = "HdbNoma"

    @property
    def duplex_mode(self) -> str:
        return "HD" if self is SchemeKind.HdbNoma else "FD"

    @property
    def access_mode(self) -> str:
        return "OMA" if self is SchemeKind.FdbOma else "NOMA"

    @property
    def du_cancellation(self) -> str:
        """'residual' (kappa_DU applies), 'none' (kappa_eff = 1) or 'n/a' (HD)."""
        if self is SchemeKind.HdbNoma:
            return "n/a"
        if self is SchemeKind.FdbNoma:
            return "none"
        return "residual"

    @classmethod
    def parse(cls, text: str) -> "SchemeKind":
        key = text.strip()
        for kind in cls:
            if kind.value.lower() == key.lower():
                return kind
        raise ValueError(f"unknown scheme {text!r}")


ALL_SCHEMES = tuple(SchemeKind)


def dbm_to_watts(x):
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(w) + 30.0


def db_to_linear(x):
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class SimConfig:
    area_radius_m: float = 300.0
    pathloss_exponent: float = 3.5
    min_distance_m: float = 1.0
    n_cells: int = 2
    n_dl_users: int = 4
    n_ul_users: int = 4
    p_dl_max_dbm: float = 30.0
    p_ul_max_dbm: float = 27.0
    si_channel_gain_db: float = 0.0
    kappa_si_db: float = -110.0
    kappa_du_db: float = -110.0
    snr_ratio_db: float = 90.0
    r_min_bps_hz: float = 0.0
    solver_tol: float = 1e-3
    scheme: SchemeKind = SchemeKind.CFdbNomaOptimal
    n_drops: int = 50
    base_seed: int = 20190101
    strict_decodability: bool = False
    # sweep / harness knobs
    schemes: tuple[SchemeKind, ...] = ALL_SCHEMES
    sweep_var: str = "snr_ratio_db"
    sweep_values: tuple[float, ...] = (60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0)
    ul_power_rule: str = "fixed"  # "fixed" or "half_dl"
    sweep_continuation: bool = True
    # solver knobs
    vertex_budget: int = 200_000
    sca_max_iter: int = 500
    sca_init_fraction: float = 0.1
    sca_restarts: int = 1
    budget_fallback: bool = True

    @property
    def p_dl_max_w(self) -> float:
        return dbm_to_watts(self.p_dl_max_dbm)

    @property
    def p_ul_max_w(self) -> float:
        return dbm_to_watts(self.p_ul_max_dbm)

    @property
    def noise_w(self) -> float:
        return self.p_dl_max_w / db_to_linear(self.snr_ratio_db)

    @property
    def kappa_si(self) -> float:
        return db_to_linear(self.kappa_si_db)

    @property
    def kappa_du(self) -> float:
        return db_to_linear(self.kappa_du_db)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ConfigError:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


SWEEP_VARS = ("snr_ratio_db", "kappa_si_db")


def validate_config(cfg: SimConfig) -> list[ConfigError]:
    """Return every violated invariant; an empty list means the config is valid."""
    errors = []
    for name in ("area_radius_m", "min_distance_m"):
        if not getattr(cfg, name) > 0:
            errors.append(ConfigError(name, "must be strictly positive"))
    if not cfg.pathloss_exponent > 0:
        errors.append(ConfigError("pathloss_exponent", "must be strictly positive"))
    for name in ("n_cells", "n_dl_users", "n_ul_users", "n_drops", "vertex_budget", "sca_max_iter", "sca_restarts"):
        if not getattr(cfg, name) >= 1:
            errors.append(ConfigError(name, "must be a positive count"))
    if cfg.n_cells >= 1:
        for name in ("n_dl_users", "n_ul_users"):
            if getattr(cfg, name) % cfg.n_cells:
                errors.append(ConfigError(name, f"not divisible by n_cells={cfg.n_cells}"))
    if not cfg.solver_tol > 0:
        errors.append(ConfigError("solver_tol", "tolerance must be positive"))
    if cfg.r_min_bps_hz < 0:
        errors.append(ConfigError("r_min_bps_hz", "must be non-negative"))
    for name in ("p_dl_max_dbm", "p_ul_max_dbm", "si_channel_gain_db", "kappa_si_db", "kappa_du_db", "snr_ratio_db"):
        if not math.isfinite(getattr(cfg, name)):
            errors.append(ConfigError(name, "must be finite"))
    if not 0 < cfg.sca_init_fraction <= 1:
        errors.append(ConfigError("sca_init_fraction", "must lie in (0, 1]"))
    if cfg.sweep_var not in SWEEP_VARS:
        errors.append(ConfigError("sweep_var", f"must be one of {SWEEP_VARS}"))
    vals = list(cfg.sweep_values)
    if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
        errors.append(ConfigError("sweep_values", "must be a non-empty strictly increasing list"))
    if cfg.ul_power_rule not in ("fixed", "half_dl"):
        errors.append(ConfigError("ul_power_rule", "must be 'fixed' or 'half_dl'"))
    if not cfg.schemes:
        errors.append(ConfigError("schemes", "at least one scheme required"))
    return errors


# -- config files --------------------------------------------------------------

class ConfigFileError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _parse_value(name: str, text: str):
    default = _FIELDS[name].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, SchemeKind):
            return SchemeKind.parse(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t for t in text.replace(",", " ").split() if t]
            if name == "schemes":
                return tuple(SchemeKind.parse(t) for t in items)
            return tuple(float(t) for t in items)
        return text
    except ValueError as exc:
        raise ConfigFileError(f"bad value for {name}: {text!r} ({exc})") from None


def parse_assignments(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; '#' starts a comment. Unknown keys are an error."""
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigFileError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def load_config(path=None, overrides=()) -> SimConfig:
    """Build a SimConfig from an optional file plus ``key=value`` overrides."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigFileError(f"cannot read config file {path}: {exc.strerror}") from None
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--set"))
    return SimConfig(**values)


def format_config(cfg: SimConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, SchemeKind):
            v = v.value
        elif isinstance(v, tuple):
            v = ", ".join(s.value if isinstance(s, SchemeKind) else repr(s) for s in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# -- power allocations and results --------------------------------------------

@dataclass(frozen=True)
class PowerAllocation:
    """Transmit powers in watts.

    ``dl_power_w[k]`` is the power the serving RRH spends on DL user ``k``;
    ``ul_power_w[u]`` is UL user ``u``'s transmit power. Use
    :meth:`dl_by_cell_rank` for the (cell, rank) view.
    """

    dl_power_w: np.ndarray
    ul_power_w: np.ndarray

    def __post_init__(self):
        for name in ("dl_power_w", "ul_power_w"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_vector(cls, p, n_dl: int) -> "PowerAllocation":
        p = np.asarray(p, dtype=float)
        return cls(p[:n_dl], p[n_dl:])

    @classmethod
    def zeros(cls, n_dl: int, n_ul: int) -> "PowerAllocation":
        return cls(np.zeros(n_dl), np.zeros(n_ul))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dl_power_w, self.ul_power_w])

    def dl_by_cell_rank(self, order) -> dict:
        return {
            (c, r + 1): float(self.dl_power_w[k])
            for c, ranked in enumerate(order.dl_rank)
            for r, k in enumerate(ranked)
        }


def power_violations(p: PowerAllocation, dl_cell, cfg: SimConfig, atol: float = 1e-12) -> list[str]:
    """Check membership in the power feasible set; returns human-readable violations."""
    out = []
    dl = p.dl_power_w
    ul = p.ul_power_w
    if np.any(dl < -atol) or np.any(ul < -atol):
        out.append("negative power")
    pdl = cfg.p_dl_max_w
    for c in range(cfg.n_cells):
        tot = dl[np.asarray(dl_cell) == c].sum()
        if tot > pdl * (1 + 1e-9) + atol:
            out.append(f"cell {c} DL sum {tot:.6g} W exceeds {pdl:.6g} W")
    if np.any(ul > cfg.p_ul_max_w * (1 + 1e-9) + atol):
        out.append("UL power above cap")
    return out


@dataclass
class SolverResult:
    p: PowerAllocation
    objective_bps_hz: float
    feasible: bool
    iterations: int
    trace: list = field(default_factory=list)
    status: str = "converged"
    solver: str = ""
    fallback: bool = False
    info: dict = field(default_factory=dict)
