"""Experiment drivers: Rician-factor sweep, density sweep, per-user SE CDF.

Each experiment runs a number of independent network setups, evaluates the
configured schemes on shared draws, and writes one CSV per experiment. Rows
are fully deterministic for a given config and seed (the CSV carries a
timestamped comment line that should be skipped when comparing outputs).

CSV schema:
    experiment,setup,sweep,scheme,bound,ue,se,ci,stat_draws,eval_draws,seed
Per-UE rows use the UE index in the `ue` column; aggregate rows use `min` or
`sum`. For the CDF experiment `sweep` holds the empirical CDF coordinate of
the row's SE sample. Floats are serialized with 17 significant digits.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamforming import Scheme
from .channel import build_channel_stats, pair_geometry, stats_from_geometry
from .errors import ConfigError
from .evaluation import MonteCarloBudgets, SeReport, evaluate_schemes
from .rng import ROLE_DEPLOY, ROLE_PHASES, subsequence, substream
from .scenario import AreaConfig, apply_power_control, assign_pilots_and_clusters, deploy

log = logging.getLogger(__name__)

DEFAULT_SEED = 0xCE11F4EE

EXPERIMENTS = ("kappa_sweep", "density_sweep", "cdf")

# Desk-scale defaults keep a full experiment within CI-friendly runtimes;
# the reference large-network scale (100 APs, 40 UEs, 4 antennas, 5 pilots)
# is opted into through the config file.
DESK_AREA_DEFAULTS = {
    "side_length_m": 1000.0,
    "ap_count": 25,
    "ue_count": 8,
    "antennas_per_ap": 2,
    "height_diff_m": 11.0,
    "carrier_freq_mhz": 5000.0,
    "shadow_std_db": 8.0,
    "pilot_count": 4,
    "coherence_symbols": 200,
    "p_max_w": 0.1,
    "pilot_power_w": None,  # defaults to p_max_w
    "noise_power_w": 10 ** (-8.7) * 1e-3,
}

DEFAULT_KAPPA_GRID = (0.0, 1.0, 5.0, 20.0, 100.0)
DEFAULT_D_GRID_M = (200.0, 400.0, 600.0, 800.0, 1000.0)
# Reference operating point for the proportional p_max scaling along d.
_P_MAX_PER_METER = 0.1 / 1000.0

CSV_HEADER = "experiment,setup,sweep,scheme,bound,ue,se,ci,stat_draws,eval_draws,seed"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    area: AreaConfig
    schemes: tuple[Scheme, ...]
    pc_exponent: float
    kappa_grid: tuple[float, ...]
    d_grid: tuple[tuple[float, float], ...]   # (side length m, p_max W)
    setups: int
    stat_budget: int
    eval_budget: int
    seed: int
    out_dir: Path

    def budgets(self) -> MonteCarloBudgets:
        return MonteCarloBudgets(stat_draws=self.stat_budget, eval_draws=self.eval_budget)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    setup: int
    sweep: float
    scheme: Scheme
    bound: str              # "uatf" or "cd"
    ue: str                 # UE index, "min" or "sum"
    se: float
    ci: float
    stat_draws: int
    eval_draws: int
    seed: int

    def to_csv(self) -> str:
        return ",".join([
            self.experiment,
            str(self.setup),
            _fmt(self.sweep),
            self.scheme.value,
            self.bound,
            self.ue,
            _fmt(self.se),
            _fmt(self.ci),
            str(self.stat_draws),
            str(self.eval_draws),
            str(self.seed),
        ])


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def parse_config(path) -> ExperimentConfig:
    """Strict JSON config parser: unknown keys are rejected, every violation
    is collected and reported in one error."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    problems: list[str] = []
    known = {"experiment", "area", "schemes", "pc_exponent", "kappa_grid", "d_grid",
             "setups", "stat_budget", "eval_budget", "seed", "out_dir"}
    unknown = set(raw) - known
    if unknown:
        problems.append(f"unknown keys: {sorted(unknown)}")

    experiment = raw.get("experiment")
    if experiment is None:
        problems.append("missing required key 'experiment'")
    elif experiment not in EXPERIMENTS:
        problems.append(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")

    area_raw = raw.get("area", {})
    area = None
    if not isinstance(area_raw, dict):
        problems.append("area must be an object")
    else:
        unknown_area = set(area_raw) - set(DESK_AREA_DEFAULTS)
        if unknown_area:
            problems.append(f"unknown area keys: {sorted(unknown_area)}")
        merged = {**DESK_AREA_DEFAULTS, **{k: v for k, v in area_raw.items() if k in DESK_AREA_DEFAULTS}}
        if merged["pilot_power_w"] is None:
            merged["pilot_power_w"] = merged["p_max_w"]
        try:
            area = AreaConfig(**merged)
            area.validate()
        except (ConfigError, TypeError) as exc:
            problems.append(f"area: {exc}")
            area = None

    schemes_raw = raw.get("schemes", [s.value for s in Scheme])
    schemes: tuple[Scheme, ...] = ()
    try:
        schemes = tuple(Scheme(s) for s in schemes_raw)
        if not schemes:
            problems.append("schemes must not be empty")
    except ValueError:
        problems.append(f"schemes must be a subset of {[s.value for s in Scheme]}")

    pc_exponent = raw.get("pc_exponent", -1.0)
    if not isinstance(pc_exponent, (int, float)) or isinstance(pc_exponent, bool):
        problems.append("pc_exponent must be a number")
    elif pc_exponent not in (-1, 0):
        log.warning("pc_exponent %s is outside the studied set {-1, 0}; proceeding", pc_exponent)

    kappa_grid = tuple(raw.get("kappa_grid", DEFAULT_KAPPA_GRID))
    if experiment == "kappa_sweep":
        if len(kappa_grid) == 0:
            problems.append("kappa_grid must not be empty for kappa_sweep")
        elif any((not isinstance(x, (int, float))) or x < 0 for x in kappa_grid):
            problems.append("kappa_grid values must be numbers >= 0")

    d_grid_raw = raw.get("d_grid")
    d_grid: tuple[tuple[float, float], ...] = ()
    if d_grid_raw is None:
        d_grid = tuple((d, d * _P_MAX_PER_METER) for d in DEFAULT_D_GRID_M)
    else:
        try:
            items = []
            for item in d_grid_raw:
                unknown_item = set(item) - {"d_m", "p_max_w"}
                if unknown_item:
                    raise KeyError(f"unknown d_grid keys: {sorted(unknown_item)}")
                d = float(item["d_m"])
                p = float(item.get("p_max_w", d * _P_MAX_PER_METER))
                if d <= 0 or p <= 0:
                    raise ValueError("d_m and p_max_w must be positive")
                items.append((d, p))
            d_grid = tuple(items)
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"d_grid: {exc}")
    if experiment == "density_sweep" and not d_grid:
        problems.append("d_grid must not be empty for density_sweep")

    def plain_int(value):
        return isinstance(value, int) and not isinstance(value, bool)

    setups = raw.get("setups", 10)
    if not plain_int(setups) or setups < 1:
        problems.append("setups must be an integer >= 1")
    stat_budget = raw.get("stat_budget", 300)
    eval_budget = raw.get("eval_budget", 300)
    for name, value in (("stat_budget", stat_budget), ("eval_budget", eval_budget)):
        if not plain_int(value) or value < 2:
            problems.append(f"{name} must be an integer >= 2")
    seed = raw.get("seed", DEFAULT_SEED)
    if not plain_int(seed) or seed < 0:
        problems.append("seed must be a nonnegative integer")
    out_dir = Path(raw.get("out_dir", "."))

    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))
    return ExperimentConfig(
        experiment=experiment,
        area=area,
        schemes=schemes,
        pc_exponent=float(pc_exponent),
        kappa_grid=kappa_grid,
        d_grid=d_grid,
        setups=setups,
        stat_budget=stat_budget,
        eval_budget=eval_budget,
        seed=seed,
        out_dir=out_dir,
    )


def _setup_reports(cfg: ExperimentConfig, area: AreaConfig, setup: int,
                   kappa_override: float | None) -> dict[Scheme, SeReport]:
    """Deploy, plan and evaluate one setup. Streams depend only on
    (seed, setup, role), so any scheduling order gives identical results."""
    base = subsequence(cfg.seed, setup)
    dep = deploy(area, substream(base, ROLE_DEPLOY))
    plan = assign_pilots_and_clusters(dep, area)
    plan = apply_power_control(plan, dep, cfg.pc_exponent, area.p_max_w)
    stats = build_channel_stats(
        dep, area, substream(base, ROLE_PHASES), kappa_override=kappa_override
    )
    return evaluate_schemes(stats, plan, area, cfg.schemes, cfg.budgets(), base)


def _setup_reports_kappa_grid(cfg: ExperimentConfig, setup: int
                              ) -> list[dict[Scheme, SeReport]]:
    """Evaluate all kappa grid points of one setup, reusing the deployment,
    the LoS phases and the (kappa-independent) scattering geometry."""
    base = subsequence(cfg.seed, setup)
    dep = deploy(cfg.area, substream(base, ROLE_DEPLOY))
    plan = assign_pilots_and_clusters(dep, cfg.area)
    plan = apply_power_control(plan, dep, cfg.pc_exponent, cfg.area.p_max_w)
    geom = pair_geometry(dep, cfg.area)
    beta_lin = 10.0 ** (dep.gains_db / 10.0)
    phases = substream(base, ROLE_PHASES).uniform(0.0, 2.0 * np.pi, size=dep.gains_db.shape)

    out = []
    for kappa in cfg.kappa_grid:
        kappa_mat = np.full(dep.gains_db.shape, float(kappa))
        stats = stats_from_geometry(geom, beta_lin, kappa_mat, phases)
        out.append(evaluate_schemes(stats, plan, cfg.area, cfg.schemes, cfg.budgets(), base))
    return out


def _report_rows(cfg: ExperimentConfig, setup: int, sweep: float,
                 reports: dict[Scheme, SeReport]) -> list[ResultRow]:
    rows = []
    for scheme in cfg.schemes:
        rep = reports[scheme]
        for bound, est in (("uatf", rep.uatf), ("cd", rep.cd)):
            common = dict(
                experiment=cfg.experiment, setup=setup, sweep=sweep, scheme=scheme,
                bound=bound, stat_draws=rep.stat_draw_count, eval_draws=rep.draw_count,
                seed=cfg.seed,
            )
            for k in range(len(est.se)):
                rows.append(ResultRow(ue=str(k), se=float(est.se[k]), ci=float(est.ci[k]), **common))
            k_min = int(np.argmin(est.se))
            rows.append(ResultRow(ue="min", se=float(est.se[k_min]), ci=float(est.ci[k_min]), **common))
            rows.append(ResultRow(
                ue="sum", se=float(est.se.sum()), ci=float(np.sqrt((est.ci ** 2).sum())), **common
            ))
    return rows


def _run_setups(tasks, threads: int):
    """Run callables over a thread pool, preserving task order in the output."""
    if threads <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [f.result() for f in futures]


def run_kappa_sweep(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[ResultRow], Path]:
    """Sweep a common Rician-factor override over all pairs.

    Every setup reuses its deployment and phases across the grid, so scheme
    and grid-point comparisons are paired.
    """
    per_setup = _run_setups(
        [lambda s=s: _setup_reports_kappa_grid(cfg, s) for s in range(cfg.setups)], threads
    )
    rows = []
    for g, kappa in enumerate(cfg.kappa_grid):
        for setup in range(cfg.setups):
            rows.extend(_report_rows(cfg, setup, float(kappa), per_setup[setup][g]))
    return rows, write_csv(cfg, rows)


def run_density_sweep(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[ResultRow], Path]:
    """Sweep the service-area side length with proportionally scaled p_max.

    Rician factors follow the distance law at every density point.
    """
    grid = list(cfg.d_grid)

    pilot_ratio = cfg.area.pilot_power_w / cfg.area.p_max_w

    def one(setup: int, d: float, p_max: float):
        area = dataclasses.replace(cfg.area, side_length_m=d, p_max_w=p_max,
                                   pilot_power_w=pilot_ratio * p_max)
        return _setup_reports(cfg, area, setup, kappa_override=None)

    tasks = [lambda s=s, d=d, p=p: one(s, d, p) for (d, p) in grid for s in range(cfg.setups)]
    results = _run_setups(tasks, threads)
    rows = []
    idx = 0
    for d, _ in grid:
        for setup in range(cfg.setups):
            rows.extend(_report_rows(cfg, setup, float(d), results[idx]))
            idx += 1
    return rows, write_csv(cfg, rows)


def run_cdf(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[ResultRow], Path]:
    """Pool per-UE SEs across setups and emit them sorted with empirical CDF
    coordinates in the sweep column."""
    per_setup = _run_setups(
        [lambda s=s: _setup_reports(cfg, cfg.area, s, None) for s in range(cfg.setups)], threads
    )
    rows = []
    for scheme in cfg.schemes:
        for bound in ("uatf", "cd"):
            samples = []
            for setup in range(cfg.setups):
                rep = per_setup[setup][scheme]
                est = rep.uatf if bound == "uatf" else rep.cd
                for k in range(len(est.se)):
                    samples.append((float(est.se[k]), setup, k, float(est.ci[k]), rep))
            samples.sort(key=lambda t: (t[0], t[1], t[2]))
            n = len(samples)
            for rank, (se, setup, k, ci, rep) in enumerate(samples, start=1):
                rows.append(ResultRow(
                    experiment=cfg.experiment, setup=setup, sweep=rank / n, scheme=scheme,
                    bound=bound, ue=str(k), se=se, ci=ci,
                    stat_draws=rep.stat_draw_count, eval_draws=rep.draw_count, seed=cfg.seed,
                ))
    return rows, write_csv(cfg, rows)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[ResultRow], Path]:
    runner = {
        "kappa_sweep": run_kappa_sweep,
        "density_sweep": run_density_sweep,
        "cdf": run_cdf,
    }[cfg.experiment]
    return runner(cfg, threads=threads)


def write_csv(cfg: ExperimentConfig, rows: list[ResultRow]) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / f"{cfg.experiment}.csv"
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    lines = [f"# cellfree-sim generated {stamp}", CSV_HEADER]
    lines.extend(row.to_csv() for row in rows)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write results to {path}: {exc}") from exc
    return path
