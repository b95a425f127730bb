"""Pre-wired reproductions of the five test cases and the two sweeps.

``run_case`` generates data for one case, runs the matching trainer and
returns a ``CaseReport``. The sweeps repeat case 4 over noise levels and
case 5 over dataset lengths, and ``table_rows`` turns a sweep into rows
with the columns of the published tables (medians over seeds).
"""
from __future__ import annotations

import csv
import enum
import io
import json
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from uniqode.errors import ConfigurationError
from uniqode.identifiability import find_matched_pairs
from uniqode.odes import (
    Case,
    NoiseSpec,
    StructuredSystem,
    Trajectory,
    builtin_system,
    inject_noise,
    rk4_integrate,
    sample_dataset,
)
from uniqode.training import FitResult, TrainConfig, default_unknowns, direct_fit, upinn_fit

NOISE_LEVELS = [0.0, 0.05, 0.075, 0.10, 0.125, 0.15, 0.30]
LENGTHS = [1024, 512, 256, 128, 64, 32, 16, 8, 4]
DEFAULT_SEEDS = [0, 1, 2]
EVAL_POINTS = 1024
# pairs counted as informative when y agrees to PAIR_TOL and C differs by PAIR_MIN_GAP
PAIR_TOL = 1e-3
PAIR_MIN_GAP = 0.05


class CaseId(str, enum.Enum):
    CASE1_U_N = "case1_u_n"
    CASE1_U_N2 = "case1_u_n2"
    CASE2 = "case2"
    CASE3 = "case3"
    CASE4 = "case4"
    CASE5 = "case5"


@dataclass
class CaseConfig:
    """Everything needed to regenerate one run; echoed into the report."""

    case: str
    system: str
    mode: str
    samples: int
    beta_init: dict[str, float] | None
    u_hidden: list[int]
    psi_hidden: list[int] | None = None
    trajectory_hidden: list[int] | None = None
    u_exponent: int = 1
    noise: float = 0.0
    dt: float = 1e-3
    epochs: int = 1000
    learning_rate: float = 1e-3
    omega_de: float = 0.0
    collocation_count: int = 0
    plateau_rtol: float | None = None
    plateau_window: int = 500
    seed: int = 0
    grid_points: int = 200

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.omega_de, self.collocation_count,
                           self.seed, self.plateau_rtol, self.plateau_window)


_H4 = [20, 20, 20, 20]

# Direct fits take far more full-batch Adam steps than the published epoch
# counts: at a rate of 1e-3 a constant moves at most ~1e-3 per step, and the
# constant/function trade-off direction is shallow.
_DEFAULTS = {
    CaseId.CASE1_U_N: dict(system="chemo_injection", mode="direct", samples=256, beta_init={"beta": 2.0},
                           u_hidden=_H4, epochs=80000),
    CaseId.CASE1_U_N2: dict(system="chemo_injection", mode="direct", samples=256, beta_init={"beta": 2.0},
                            u_hidden=_H4, u_exponent=2, epochs=40000),
    CaseId.CASE2: dict(system="chemo_unknown_growth", mode="direct", samples=256, beta_init=None,
                       u_hidden=_H4, psi_hidden=_H4, epochs=40000),
    CaseId.CASE3: dict(system="lotka_volterra", mode="direct", samples=500,
                       beta_init={"alpha": 2.0, "gamma": 2.0}, u_hidden=_H4, epochs=20000),
    # case 4 reuses the case-3 data, with noise on top
    CaseId.CASE4: dict(system="lotka_volterra", mode="upinn", samples=500,
                       beta_init={"alpha": 1.5, "gamma": 0.5}, u_hidden=_H4, trajectory_hidden=_H4,
                       epochs=20000, omega_de=0.1, collocation_count=1024, plateau_rtol=1e-6),
    CaseId.CASE5: dict(system="chemo_scaled_injection", mode="upinn", samples=1024,
                       beta_init={"beta": 1.5}, u_hidden=[10, 10], trajectory_hidden=[20, 20, 20],
                       epochs=20000, omega_de=0.001, collocation_count=1024, plateau_rtol=1e-6),
}


def _parse_case(case) -> CaseId:
    try:
        return CaseId(case.value if isinstance(case, enum.Enum) else str(case).lower())
    except ValueError:
        raise ConfigurationError(f"unknown case {case!r}; choose from {[c.value for c in CaseId]}") from None


def _check_type(name, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool) or isinstance(value, bool):
        ok = isinstance(value, bool) and isinstance(default, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float))
        value = float(value) if ok else value
    elif isinstance(default, list):
        ok = isinstance(value, (list, tuple)) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
        value = list(value) if ok else value
    elif isinstance(default, dict):
        ok = isinstance(value, dict) and all(isinstance(v, (int, float)) for v in value.values())
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigurationError(f"override {name!r}: expected {type(default).__name__}, got {value!r}")
    return value


_FIELD_DEFAULTS = {
    "psi_hidden": _H4, "trajectory_hidden": _H4, "plateau_rtol": 1e-6, "beta_init": {"beta": 1.0},
}


def case_config(case, overrides: dict | None = None) -> CaseConfig:
    """Default configuration for ``case`` with type-checked ``overrides`` applied."""
    cid = _parse_case(case)
    cfg = CaseConfig(case=cid.value, **_DEFAULTS[cid])
    if not overrides:
        return cfg
    names = {f.name for f in fields(CaseConfig)} - {"case", "system", "mode"}
    unknown = set(overrides) - names
    if unknown:
        raise ConfigurationError(f"unknown override(s) {sorted(unknown)} for {cid.value}")
    checked = {}
    for k, v in overrides.items():
        default = getattr(cfg, k)
        checked[k] = _check_type(k, v, default if default is not None else _FIELD_DEFAULTS.get(k))
    out = replace(cfg, **checked)
    if out.samples < 1:
        raise ConfigurationError("samples must be at least 1")
    if not 0.0 <= out.noise <= 1.0:
        raise ConfigurationError("noise must lie in [0, 1]")
    out.train_config()  # validates the training fields
    return out


@dataclass
class CaseReport:
    case: str
    config: dict
    constants: dict[str, float]
    true_constants: dict[str, float]
    percent_errors: dict[str, float]
    losses: dict[str, float]
    r2: float
    mape: float
    mse: float
    wall_seconds: float
    epochs_run: int
    functions: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    mape_skipped: int = 0
    paired_ranges: dict[str, list[float] | None] = field(default_factory=dict)
    paired_functions: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def function_csv(self, name: str) -> str:
        f = self.functions[name]
        lines = ["y,true,predicted"]
        lines += [f"{a!r},{b!r},{c!r}" for a, b, c in zip(f["y"], f["true"], f["predicted"])]
        return "\n".join(lines) + "\n"


def percent_error(pred: float, true: float) -> float:
    return 100.0 * abs(pred - true) / abs(true)


_cache: dict[tuple, Trajectory] = {}
_cache_lock = threading.Lock()


def _integrate(cfg: CaseConfig, system: StructuredSystem) -> Trajectory:
    # builtin systems are fixed by (name, u_exponent), so sweeps can share one integration
    key = (cfg.system, cfg.u_exponent, cfg.dt)
    with _cache_lock:
        if key not in _cache:
            _cache[key] = rk4_integrate(system, dt=cfg.dt)
        return _cache[key]


def generate_data(cfg: CaseConfig, system: StructuredSystem) -> tuple[Trajectory, Trajectory, Trajectory]:
    """(training data, noiseless samples at the same times, dense noiseless reference)."""
    full = _integrate(cfg, system)
    clean = sample_dataset(full, cfg.samples)
    dense = sample_dataset(full, min(EVAL_POINTS, len(full)))
    if cfg.mode == "direct":
        return clean, clean, dense
    noisy = inject_noise(clean, NoiseSpec(cfg.noise, seed=cfg.seed))
    return noisy, clean, dense


def _term_entries(res: FitResult, term, grid: np.ndarray) -> dict:
    y = grid[:, None]
    entries = {term.u_name: (term.u_true(y), res.predict(term.u_name, grid))}
    if term.growth_known:
        beta = res.constants[term.beta_name]
        entries[f"{term.beta_name}_g"] = (term.beta_true * term.g(y), beta * term.g(y))
    else:
        entries[term.g_name] = (term.g_true(y), res.predict(term.g_name, grid))
    return {name: {"y": grid.tolist(), "true": np.asarray(true, float).tolist(),
                   "predicted": np.asarray(pred, float).tolist()}
            for name, (true, pred) in entries.items()}


def _function_grid(res: FitResult, system: StructuredSystem, data: Trajectory, points: int,
                   ranges: dict | None = None) -> dict:
    """True vs predicted functions on a grid over the observed y range, or over ``ranges[u_name]``."""
    out = {}
    for term in system.terms:
        y_obs = np.asarray(term.H1(data.states), dtype=np.float64).reshape(len(data), -1)
        if y_obs.shape[1] != 1:
            continue
        if ranges is None:
            lo, hi = y_obs.min(), y_obs.max()
        elif ranges.get(term.u_name) is None:
            continue
        else:
            lo, hi = ranges[term.u_name]
        out.update(_term_entries(res, term, np.linspace(lo, hi, points)))
    return out


def paired_range(data: Trajectory, term, d_tol: float = PAIR_TOL, min_gap: float = PAIR_MIN_GAP):
    """[lo, hi] of scalar y over samples in an informative matched pair, or None."""
    pairs = [p for p in find_matched_pairs(data, term.H1, term.C, d_tol) if abs(p.c_gap) >= min_gap]
    if not pairs:
        return None
    y = np.asarray(term.H1(data.states), dtype=np.float64).reshape(len(data), -1)[:, 0]
    idx = sorted({k for p in pairs for k in (p.i, p.j)})
    return [float(y[idx].min()), float(y[idx].max())]


def run_case(case, overrides: dict | None = None) -> CaseReport:
    """Generate data, fit, and report recovered constants, losses, metrics and function grids."""
    cfg = case_config(case, overrides)
    system = builtin_system(Case(cfg.system), u_exponent=cfg.u_exponent) if cfg.system == "chemo_injection" \
        else builtin_system(Case(cfg.system))
    data, clean, dense = generate_data(cfg, system)
    spec = default_unknowns(system, seed=cfg.seed, beta_init=cfg.beta_init, u_hidden=cfg.u_hidden,
                            psi_hidden=cfg.psi_hidden, trajectory_hidden=cfg.trajectory_hidden,
                            with_trajectory=cfg.mode == "upinn")
    start = time.perf_counter()
    if cfg.mode == "direct":
        res = direct_fit(data, system, spec, cfg.train_config())
    else:
        res = upinn_fit(data, system, spec, cfg.train_config(), reference=dense)
    wall = time.perf_counter() - start

    ranges = {t.u_name: paired_range(clean, t) for t in system.terms}
    truth = {t.beta_name: float(t.beta_true) for t in system.terms if t.growth_known}
    errors = {k: percent_error(v, truth[k]) for k, v in res.constants.items() if k in truth}
    return CaseReport(
        case=cfg.case, config=asdict(cfg), constants=res.constants, true_constants=truth,
        percent_errors=errors, losses=dict(res.final_losses), r2=res.metrics["r2"],
        mape=res.metrics["mape"], mse=res.metrics["mse"], wall_seconds=wall,
        epochs_run=res.epochs_run, functions=_function_grid(res, system, clean, cfg.grid_points),
        mape_skipped=res.metrics["mape_skipped"],
        paired_ranges=ranges,
        paired_functions=_function_grid(res, system, clean, cfg.grid_points, ranges),
    )


# ------------------------------------------------------------------ sweeps

def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sweep_noise(levels=None, seeds=None, overrides: dict | None = None, workers: int = 1) -> list[CaseReport]:
    """Case 4 at every noise level and seed; reports ordered by level, then seed."""
    levels = NOISE_LEVELS if levels is None else list(levels)
    seeds = DEFAULT_SEEDS if seeds is None else list(seeds)
    bad = [v for v in levels if not 0.0 <= v <= 1.0]
    if bad:
        raise ConfigurationError(f"noise levels must lie in [0, 1], got {bad}")
    jobs = [{**(overrides or {}), "noise": float(v), "seed": int(s)} for v in levels for s in seeds]
    return _map(lambda o: run_case(CaseId.CASE4, o), jobs, workers)


def sweep_length(lengths=None, seeds=None, overrides: dict | None = None, workers: int = 1) -> list[CaseReport]:
    """Case 5 at every dataset length and seed; reports ordered by length, then seed."""
    lengths = LENGTHS if lengths is None else list(lengths)
    seeds = DEFAULT_SEEDS if seeds is None else list(seeds)
    bad = [m for m in lengths if int(m) < 1]
    if bad:
        raise ConfigurationError(f"lengths must be at least 1, got {bad}")
    jobs = [{**(overrides or {}), "samples": int(m), "seed": int(s)} for m in lengths for s in seeds]
    return _map(lambda o: run_case(CaseId.CASE5, o), jobs, workers)


# ------------------------------------------------------------------ tables

TABLE_COLUMNS = {
    "table1": ["%Noise", "Pred. alpha", "Pred. gamma", "alpha %Error", "gamma %Error"],
    "table2": ["%Noise", "Data Loss", "ODE Loss", "R^2", "MAPE"],
    "table3": ["Length", "Pred. beta", "beta %Error"],
    "table4": ["Length", "Data Loss", "ODE Loss", "R^2", "MAPE"],
}


def _groups(reports: list[CaseReport], key: str):
    out: dict = {}
    for r in reports:
        out.setdefault(r.config[key], []).append(r)
    return out


def _median(values):
    return statistics.median(values)


def table_rows(table: str, reports: list[CaseReport]) -> list[list]:
    """Rows for one published table; each cell is the median over the seeds run at that row."""
    if table not in TABLE_COLUMNS:
        raise ConfigurationError(f"unknown table {table!r}")
    key = "noise" if table in ("table1", "table2") else "samples"
    rows = []
    for level, group in _groups(reports, key).items():
        head = 100.0 * level if key == "noise" else level
        if table == "table1":
            rows.append([head, _median([r.constants["alpha"] for r in group]),
                         _median([r.constants["gamma"] for r in group]),
                         _median([r.percent_errors["alpha"] for r in group]),
                         _median([r.percent_errors["gamma"] for r in group])])
        elif table == "table3":
            rows.append([head, _median([r.constants["beta"] for r in group]),
                         _median([r.percent_errors["beta"] for r in group])])
        else:
            rows.append([head, _median([r.losses["data"] for r in group]),
                         _median([r.losses["ode"] for r in group]),
                         _median([r.r2 for r in group]), _median([r.mape for r in group])])
    return rows


def table_csv(table: str, reports: list[CaseReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS[table])
    for row in table_rows(table, reports):
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def reports_json(reports: list[CaseReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True, allow_nan=True)
