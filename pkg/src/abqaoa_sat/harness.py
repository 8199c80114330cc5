"""Experiment orchestration: ensembles, sweeps, levels-to-solution and R studies.

Every random draw comes from a ``SeedSequence`` keyed by the task coordinates
(never by worker or submission order), and results are reduced in task order,
so output files depend only on the config and the seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .diagnostics import (
    DIAGNOSTIC_COLUMNS,
    diagnostic_rows,
    infidelity,
    residual_energy,
    success_probability,
    sat_probability,
    trajectory_diagnostics,
)
from .ofab import OfabConfig, opt_free_run
from .sat import Formula, GroundSolution, as_fraction, brute_force_ground, generate_instance
from .statevector import build_cost_diagonal, probabilities
from .variational import OptimizerConfig, SampleFailure, best_record, decide_sat, optimize_points, run, tqa_init

log = logging.getLogger(__name__)

ALGORITHMS = ("qaoa", "ab_qaoa", "ofab")
PROBLEMS = ("decision", "max")
SATURATION_LEVEL = 64
IF_SOLVED = 0.1
REL_CHANGE_TOL = 1e-2
QAOA_LEVELS = tuple(range(1, 9)) + tuple(range(16, 65, 8))
ABQAOA_LEVELS = tuple(range(1, 9)) + (16, 24)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3

_ALGO_KEY = {"qaoa": 1, "ab_qaoa": 1, "ofab": 2}


class ConfigError(ValueError):
    pass


DECISION_GRID = ["0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1", "1.2", "1.4"]
MAX_GRID = ["0.9", "1.2", "1.5", "2", "2.5", "3"]

# Named experiment defaults; a config file and CLI flags override them.
PRESETS = {
    "success": {
        "n_list": [10], "alphas": DECISION_GRID, "levels": [4, 8, 16, 24],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 100, "problem": "decision",
    },
    "energy": {
        "n_list": [10], "alphas": MAX_GRID, "levels": [4, 8, 16, 24],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 100, "problem": "max",
    },
    "levels": {
        "n_list": [6, 8, 10], "alphas": ["0.6", "0.7", "0.8", "2", "3"], "levels": [1],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 100, "problem": "max",
    },
    "levels12": {
        "n_list": [12], "alphas": ["0.6", "0.7", "0.8", "2", "3"], "levels": [1],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 50, "problem": "max",
    },
    "rstudy": {
        "n_list": [6, 8, 10], "alphas": ["3"], "levels": [8],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 50, "problem": "max",
    },
    "diagnostics": {
        "n_list": [10], "alphas": ["3"], "levels": [8, 24],
        "algorithms": ["qaoa", "ab_qaoa"], "instances": 100, "problem": "max",
    },
    "ofab": {
        "n_list": [10], "alphas": DECISION_GRID[:8] + MAX_GRID, "levels": [4, 8, 16, 24],
        "algorithms": ["ofab"], "instances": 100, "problem": "max",
    },
}


@dataclass
class ExperimentConfig:
    seed: int
    n_list: list[int] = field(default_factory=lambda: [10])
    alphas: list = field(default_factory=lambda: ["0.6"])
    levels: list[int] = field(default_factory=lambda: [4])
    algorithms: list[str] = field(default_factory=lambda: ["qaoa", "ab_qaoa"])
    init: str = "tqa"
    instances: int = 100
    problem: str = "max"
    optimizer: dict = field(default_factory=dict)
    threads: int = 1
    output_dir: str = "results"
    shots: int | None = None

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        self.seed = int(self.seed)
        if not self.n_list or not self.alphas or not self.levels or not self.algorithms:
            raise ConfigError("n_list, alphas, levels and algorithms must be non-empty")
        self.n_list = [int(n) for n in self.n_list]
        self.levels = sorted(int(p) for p in self.levels)
        try:
            self.alphas = [as_fraction(a) for a in self.alphas]
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad alpha: {exc}") from None
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ConfigError(f"unknown algorithms {sorted(bad)}")
        if self.init not in ("tqa", "fourier"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.instances < 1 or self.threads < 1 or min(self.levels) < 1:
            raise ConfigError("instances, threads and levels must be positive")
        try:
            self.optimizer_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig().with_overrides(**self.optimizer)

    def ofab_config(self, p: int) -> OfabConfig:
        opt = self.optimizer_config()
        return OfabConfig(p=p, samples=opt.samples, dt=opt.dt, learning_rate=opt.learning_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alphas"] = [str(a) for a in self.alphas]
        d["optimizer"] = self.optimizer_config().to_dict()
        d.pop("threads")  # must not influence any output
        d.pop("output_dir")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("seed is mandatory")
        return cls(**d)

    @classmethod
    def load(cls, path=None, preset: str | None = None, **overrides) -> "ExperimentConfig":
        """Preset defaults, then the JSON file at ``path``, then non-None ``overrides``."""
        d = {}
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            d.update(PRESETS[preset])
        if path is not None:
            try:
                with open(path) as fh:
                    d.update(json.load(fh))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- seeding -----------------------------------------------------------------


def _alpha_key(alpha) -> tuple[int, int]:
    a = as_fraction(alpha)
    return a.numerator, a.denominator


def instance_rng(seed: int, n: int, alpha, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, n, *_alpha_key(alpha), index)))


def run_rng(seed: int, algo: str, n: int, alpha, p: int, index: int) -> np.random.Generator:
    """Stream for one optimization; QAOA and ab-QAOA share it so their TQA angles match."""
    level = 0 if algo == "ofab" else p
    key = (_ALGO_KEY[algo], n, *_alpha_key(alpha), level, index)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def generate_ensemble(seed: int, n: int, alpha, count: int) -> list[Formula]:
    return [generate_instance(n, alpha, instance_rng(seed, n, alpha, i)) for i in range(count)]


def instance_id(n: int, alpha, index: int) -> str:
    return f"n{n}_a{as_fraction(alpha)}_i{index}".replace("/", "-")


# --- per-instance evaluation ---------------------------------------------------

RESULT_COLUMNS = (
    ("instance_id", str),
    ("algo", str),
    ("n", int),
    ("alpha", str),
    ("p", int),
    ("m", int),
    ("ground_energy", int),
    ("sat", int),
    ("energy", float),
    ("residual_energy", float),
    ("infidelity", float),
    ("verdict", int),
    ("success", int),
    ("n_con", int),
    ("n_con_mean", float),
    ("converged", int),
    ("gate_proxy", float),
    ("sampled_energy", float),
    ("status", str),
)

SUMMARY_COLUMNS = (
    ("algo", str),
    ("n", int),
    ("alpha", str),
    ("p", int),
    ("count", int),
    ("failed", int),
    ("p_sat", float),
    ("p_succ", float),
    ("residual_energy_mean", float),
    ("residual_energy_stderr", float),
    ("infidelity_mean", float),
    ("infidelity_stderr", float),
    ("n_con_mean", float),
    ("gate_proxy_mean", float),
)


@dataclass
class Task:
    algo: str
    n: int
    alpha: Fraction
    index: int
    levels: tuple[int, ...]
    formula: Formula
    seed: int
    init: str
    optimizer: OptimizerConfig
    ofab: OfabConfig | None = None
    shots: int | None = None


def sampled_energy(psi: np.ndarray, cost: np.ndarray, shots: int, rng: np.random.Generator) -> float:
    """Shot-noise estimate of ``<H_C>`` from computational-basis samples."""
    prob = probabilities(psi)
    draws = rng.choice(len(prob), size=shots, p=prob / prob.sum())
    return float(cost[draws].mean())


def _base_row(task: Task, p: int, ground: GroundSolution) -> dict:
    return {
        "instance_id": instance_id(task.n, task.alpha, task.index),
        "algo": task.algo,
        "n": task.n,
        "alpha": str(task.alpha),
        "p": p,
        "m": task.formula.m,
        "ground_energy": ground.energy,
        "sat": int(ground.energy == 0),
        "energy": math.nan,
        "residual_energy": math.nan,
        "infidelity": math.nan,
        "verdict": -1,
        "success": 0,
        "n_con": -1,
        "n_con_mean": math.nan,
        "converged": 0,
        "gate_proxy": math.nan,
        "sampled_energy": math.nan,
        "status": "ok",
    }


def _finish_row(row: dict, energy: float, psi_if: float, ground: GroundSolution) -> dict:
    verdict = decide_sat(energy)
    row.update(
        energy=energy,
        residual_energy=residual_energy(energy, ground),
        infidelity=psi_if,
        verdict=int(verdict),
        success=int(verdict == (ground.energy == 0)),
    )
    return row


def evaluate_task(task: Task) -> list[dict]:
    """Run one algorithm on one instance at every requested level; one row per level."""
    ground = brute_force_ground(task.formula)
    cost = build_cost_diagonal(task.formula)
    rows = []
    if task.algo == "ofab":
        res = opt_free_run(cost, task.ofab, run_rng(task.seed, "ofab", task.n, task.alpha, 0, task.index))
        grounds = set(ground.ground_indices.tolist())
        for p in task.levels:
            energy, bits = res.at_level(p)
            idx = int(bits @ (1 << np.arange(task.n)))
            row = _finish_row(_base_row(task, p, ground), float(energy), float(idx not in grounds), ground)
            row["gate_proxy"] = p * p / 2
            rows.append(row)
        return rows
    for p in task.levels:
        row = _base_row(task, p, ground)
        rng = run_rng(task.seed, task.algo, task.n, task.alpha, p, task.index)
        try:
            result = run(cost, p, task.algo, task.init, task.optimizer, rng)
        except SampleFailure as exc:
            row["status"] = f"failed: {exc}"
            rows.append(row)
            continue
        rec = result.record
        _finish_row(row, rec.best_energy, infidelity(result.state, ground), ground)
        ncon_mean = float(np.mean([s.n_con for s in result.samples if s is not None]))
        row.update(
            n_con=rec.n_con,
            n_con_mean=ncon_mean,
            converged=int(rec.converged),
            gate_proxy=ncon_mean * p * p,
        )
        if task.shots:
            row["sampled_energy"] = sampled_energy(result.state, cost, task.shots, rng)
        rows.append(row)
    return rows


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Ordered map; ``threads > 1`` fans out to worker processes."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=1))


# --- sweep -------------------------------------------------------------------


def build_tasks(config: ExperimentConfig) -> list[Task]:
    opt = config.optimizer_config()
    tasks = []
    for n in config.n_list:
        for alpha in config.alphas:
            # one ensemble per (n, alpha), shared by every algorithm
            ensemble = generate_ensemble(config.seed, n, alpha, config.instances)
            for algo in config.algorithms:
                for i, f in enumerate(ensemble):
                    ofab = config.ofab_config(max(config.levels)) if algo == "ofab" else None
                    tasks.append(
                        Task(algo, n, alpha, i, tuple(config.levels), f, config.seed, config.init, opt, ofab, config.shots)
                    )
    return tasks


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Per-(algo, n, alpha, p) means; failed rows are counted, not averaged."""
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["algo"], r["n"], r["alpha"], r["p"]), []).append(r)
    out = []
    for (algo, n, alpha, p), group in cells.items():
        ok = [r for r in group if r["status"] == "ok"]
        summary = {
            "algo": algo,
            "n": n,
            "alpha": alpha,
            "p": p,
            "count": len(ok),
            "failed": len(group) - len(ok),
        }
        if ok:
            de = np.array([r["residual_energy"] for r in ok])
            inf = np.array([r["infidelity"] for r in ok])
            ncon = np.array([r["n_con_mean"] for r in ok])
            gp = np.array([r["gate_proxy"] for r in ok])
            summary.update(
                p_sat=sat_probability([r["sat"] for r in ok]),
                p_succ=success_probability([r["verdict"] for r in ok], [r["sat"] for r in ok]),
                residual_energy_mean=float(de.mean()),
                residual_energy_stderr=_stderr(de),
                infidelity_mean=float(inf.mean()),
                infidelity_stderr=_stderr(inf),
                n_con_mean=float(ncon.mean()) if not np.all(np.isnan(ncon)) else math.nan,
                gate_proxy_mean=float(gp.mean()),
            )
        else:
            for name, _ in SUMMARY_COLUMNS[6:]:
                summary[name] = math.nan
        out.append(summary)
    return out


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]
    files: dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)

    @property
    def failed_cells(self) -> list[dict]:
        return [{k: s[k] for k in ("algo", "n", "alpha", "p", "failed")} for s in self.summary if s["failed"]]

    def gate_cost_ratio(self, n: int, alpha, p: int) -> float:
        """QAOA over ab-QAOA mean ``N_con p^2`` on one cell."""
        return self.cell("qaoa", n, alpha, p)["gate_proxy_mean"] / self.cell("ab_qaoa", n, alpha, p)["gate_proxy_mean"]

    def cell(self, algo: str, n: int, alpha, p: int) -> dict:
        key = (algo, n, str(as_fraction(alpha)), p)
        for s in self.summary:
            if (s["algo"], s["n"], s["alpha"], s["p"]) == key:
                return s
        raise KeyError(key)


def sweep(config: ExperimentConfig, write: bool = True) -> SweepResult:
    tasks = build_tasks(config)
    log.info("sweep: %d tasks on %d worker(s)", len(tasks), config.threads)
    rows = [row for chunk in parallel_map(evaluate_task, tasks, config.threads) for row in chunk]
    result = SweepResult(rows, aggregate(rows))
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        result.files["results"] = str(export_tables(rows, RESULT_COLUMNS, out / "results.csv"))
        result.files["summary"] = str(export_tables(result.summary, SUMMARY_COLUMNS, out / "summary.csv"))
        result.files["manifest"] = str(
            write_manifest(config, out / "manifest.json", sorted(result.files), {"failed_cells": result.failed_cells})
        )
    return result


# --- levels-to-solution ------------------------------------------------------


def default_level_schedule(algo: str) -> tuple[int, ...]:
    return QAOA_LEVELS if algo == "qaoa" else ABQAOA_LEVELS


@dataclass
class LevelsOutcome:
    level: int
    solved: bool
    tried: list[tuple[int, float, float]]  # (p, energy, infidelity)


def _solved(problem: str, energy: float, inf: float, truth: bool) -> bool:
    if problem == "max":
        return inf <= IF_SOLVED
    return decide_sat(energy) == truth


def levels_to_solution(
    f: Formula,
    algo: str,
    config: OptimizerConfig,
    problem: str = "max",
    seed: int = 0,
    index: int = 0,
    schedule: Sequence[int] | None = None,
    init: str = "tqa",
) -> LevelsOutcome:
    """First level on the schedule that solves ``f``; ``SATURATION_LEVEL`` if none does.

    ``problem="max"`` asks for infidelity at most 0.1, ``"decision"`` for the
    correct SAT/UNSAT verdict.
    """
    if problem not in PROBLEMS:
        raise ValueError(f"problem must be one of {PROBLEMS}")
    schedule = tuple(schedule or default_level_schedule(algo))
    ground = brute_force_ground(f)
    truth = ground.energy == 0
    cost = build_cost_diagonal(f)
    alpha = f.alpha
    tried = []
    if algo == "ofab":
        res = opt_free_run(
            cost,
            OfabConfig(p=max(schedule), samples=config.samples, dt=config.dt, learning_rate=config.learning_rate),
            run_rng(seed, "ofab", f.n, alpha, 0, index),
        )
        grounds = set(ground.ground_indices.tolist())
        for p in schedule:
            energy, bits = res.at_level(p)
            inf = float(int(bits @ (1 << np.arange(f.n))) not in grounds)
            tried.append((p, float(energy), inf))
            if _solved(problem, energy, inf, truth):
                return LevelsOutcome(p, True, tried)
        return LevelsOutcome(SATURATION_LEVEL, False, tried)
    for p in schedule:
        result = run(cost, p, algo, init, config, run_rng(seed, algo, f.n, alpha, p, index))
        inf = infidelity(result.state, ground)
        tried.append((p, result.energy, inf))
        if _solved(problem, result.energy, inf, truth):
            return LevelsOutcome(p, True, tried)
    return LevelsOutcome(SATURATION_LEVEL, False, tried)


def _levels_task(args) -> dict:
    f, algo, opt, problem, seed, index, init = args
    out = levels_to_solution(f, algo, opt, problem, seed, index, init=init)
    return {
        "instance_id": instance_id(f.n, f.alpha, index),
        "algo": algo,
        "n": f.n,
        "alpha": str(f.alpha),
        "level": out.level,
        "solved": int(out.solved),
    }


LEVEL_COLUMNS = (("instance_id", str), ("algo", str), ("n", int), ("alpha", str), ("level", int), ("solved", int))
LEVEL_SUMMARY_COLUMNS = (
    ("algo", str),
    ("n", int),
    ("alpha", str),
    ("count", int),
    ("solved", int),
    ("level_mean", float),
    ("level_stderr", float),
)


def aggregate_levels(rows: Sequence[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["algo"], r["n"], r["alpha"]), []).append(r)
    out = []
    for (algo, n, alpha), group in cells.items():
        lv = np.array([r["level"] for r in group], dtype=float)
        out.append(
            {
                "algo": algo,
                "n": n,
                "alpha": alpha,
                "count": len(group),
                "solved": sum(r["solved"] for r in group),
                "level_mean": float(lv.mean()),
                "level_stderr": _stderr(lv),
            }
        )
    return out


def levels_study(config: ExperimentConfig, write: bool = True) -> list[dict]:
    opt = config.optimizer_config()
    jobs = []
    for n in config.n_list:
        for alpha in config.alphas:
            ensemble = generate_ensemble(config.seed, n, alpha, config.instances)
            for algo in config.algorithms:
                jobs += [(f, algo, opt, config.problem, config.seed, i, config.init) for i, f in enumerate(ensemble)]
    rows = parallel_map(_levels_task, jobs, config.threads)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_tables(rows, LEVEL_COLUMNS, out / "levels.csv")
        export_tables(aggregate_levels(rows), LEVEL_SUMMARY_COLUMNS, out / "levels_summary.csv")
        write_manifest(config, out / "manifest.json", ["levels", "levels_summary"])
    return rows


# --- R convergence -----------------------------------------------------------


def relative_change(a: float, b: float) -> float:
    if a == b:
        return 0.0
    if a == 0:
        return math.inf
    return abs(b - a) / abs(a)


def convergent_r(r_grid: Sequence[int], values: Sequence[float], tol: float = REL_CHANGE_TOL) -> int | None:
    """Smallest grid R from which every further step changes the metric by less than ``tol``.

    ``None`` if the last step on the grid still exceeds the tolerance.
    """
    if len(r_grid) != len(values) or not r_grid:
        raise ValueError("grid and values must be equal-length and non-empty")
    if any(b <= a for a, b in zip(r_grid, r_grid[1:])):
        raise ValueError("R grid must be increasing")
    start = len(r_grid) - 1
    for i in range(len(values) - 2, -1, -1):
        if relative_change(values[i], values[i + 1]) < tol:
            start = i
        else:
            break
    if start == len(r_grid) - 1 and len(r_grid) > 1:
        return None
    return r_grid[start]


@dataclass
class RStudy:
    r_grid: list[int]
    residual_energy: list[float]
    infidelity: list[float]
    convergent: dict[str, int | None]


def _prefix_metrics(args) -> tuple[list[float], list[float]]:
    f, algo, p, opt, r_grid, seed, index = args
    ground = brute_force_ground(f)
    cost = build_cost_diagonal(f)
    rng = run_rng(seed, algo, f.n, f.alpha, p, index)
    points = tqa_init(p, max(r_grid), opt.dt, opt.xi, f.n, rng)
    records = optimize_points(cost, points, opt, algo)
    de, inf = [], []
    for R in r_grid:
        best = best_record(records[:R])
        de.append(best.best_energy - ground.energy)
        inf.append(infidelity(best.state(cost), ground))
    return de, inf


def r_convergence_study(
    formulas: Sequence[Formula],
    r_grid: Sequence[int],
    config: OptimizerConfig,
    algo: str = "ab_qaoa",
    p: int = 8,
    seed: int = 0,
    threads: int = 1,
) -> RStudy:
    """Ensemble-mean best-of-R residual energy and infidelity versus R.

    The R samples for each instance are drawn once at the largest R; smaller
    R use the leading samples, so the curves are monotone per instance.
    """
    r_grid = list(r_grid)
    if any(b <= a for a, b in zip(r_grid, r_grid[1:])):
        raise ValueError("R grid must be increasing")
    jobs = [(f, algo, p, config, r_grid, seed, i) for i, f in enumerate(formulas)]
    per = parallel_map(_prefix_metrics, jobs, threads)
    de = np.mean([d for d, _ in per], axis=0).tolist()
    inf = np.mean([i for _, i in per], axis=0).tolist()
    return RStudy(r_grid, de, inf, {"residual_energy": convergent_r(r_grid, de), "infidelity": convergent_r(r_grid, inf)})


# --- diagnostics driver -------------------------------------------------------


def _diag_task(args) -> list[dict]:
    f, algo, p, opt, seed, index, etas, metrics, init = args
    cost = build_cost_diagonal(f)
    ground = brute_force_ground(f)
    result = run(cost, p, algo, init, opt, run_rng(seed, algo, f.n, f.alpha, p, index))
    series = trajectory_diagnostics(cost, result.record, etas, metrics, grounds=ground)
    return diagnostic_rows(instance_id(f.n, f.alpha, index), algo, p, f.alpha, series)


def diagnostics_study(config: ExperimentConfig, etas, metrics, write: bool = True) -> list[dict]:
    opt = config.optimizer_config()
    jobs = []
    for n in config.n_list:
        for alpha in config.alphas:
            ensemble = generate_ensemble(config.seed, n, alpha, config.instances)
            for algo in config.algorithms:
                if algo == "ofab":
                    raise ConfigError("trajectory diagnostics need an optimized algorithm")
                for p in config.levels:
                    jobs += [(f, algo, p, opt, config.seed, i, tuple(etas), tuple(metrics), config.init) for i, f in enumerate(ensemble)]
    rows = [r for chunk in parallel_map(_diag_task, jobs, config.threads) for r in chunk]
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_tables(rows, DIAG_COLUMNS, out / "diagnostics.csv")
        write_manifest(config, out / "manifest.json", ["diagnostics"])
    return rows


DIAG_COLUMNS = tuple(zip(DIAGNOSTIC_COLUMNS, (str, str, int, str, float, int, str, float)))


# --- export --------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        return format(float(v), ".12g")
    return str(v)


def export_tables(rows: Iterable[dict], columns: Sequence[tuple[str, type]], path) -> Path:
    """Write a CSV with fixed column order and 12 significant digits."""
    path = Path(path)
    names = [c for c, _ in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in rows:
            w.writerow([format_value(r[c]) for c in names])
    return path


def read_table(path, columns: Sequence[tuple[str, type]]) -> list[dict]:
    types = dict(columns)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != [c for c, _ in columns]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        return [{k: types[k](v) for k, v in row.items()} for row in reader]


def write_manifest(config: ExperimentConfig, path, outputs: Sequence[str], extra: dict | None = None) -> Path:
    payload = {
        "tool": "abqaoa_sat",
        "version": __version__,
        "seed": config.seed,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "outputs": list(outputs),
        **(extra or {}),
    }
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
