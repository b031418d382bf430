"""Experiment configuration, sweep orchestration, and trace persistence.

Experiments are described by INI files with four sections (topology,
problem, algorithm, output) plus optional cost and sweep sections; see the
README for the exact keys.  A sweep is either the Cartesian product of the
listed axes or an explicit list of override points (used by the presets to
pair a tuned step size with each local step count).

Every grid point produces one CSV of aggregated per-iteration metrics; a
JSON manifest records the library version, the full resolved configuration,
the seeds, and per-point summary data.  Re-running a config, or the manifest
itself, reproduces byte-identical outputs.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path

from . import __version__
from .algorithms import RunConfig, config_dict, run
from .graph import Topology, build_from_edges, build_ring
from .metrics import Trace, reference_charges
from .problems import ProblemInstance, generate_classification

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "parse_config",
    "load_config",
    "build_topology",
    "build_instance",
    "expand_grid",
    "make_run_config",
    "run_experiment",
    "stopping_time",
    "tune_gamma",
    "preset_fig1",
    "preset_fig2",
    "FIG1_TUNED_GAMMA",
    "FIG2_TUNED_GAMMA",
]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


_SWEEP_AXES = ("gamma", "tau", "tg_tc_ratio", "variant")
_CSV_BASE_COLUMNS = [
    "k",
    "model_time",
    "grad_norm_sq_mean",
    "grad_norm_sq_std",
    "consensus_err_mean",
    "component_evals",
    "comms",
]


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description.

    ``sweep`` maps axis names to value lists (Cartesian product); ``points``
    is an explicit list of override dicts and takes precedence over
    ``sweep`` when non-empty.
    """

    name: str
    topology: dict
    problem: dict
    algorithm: dict
    sweep: dict = field(default_factory=dict)
    points: list = field(default_factory=list)
    output_dir: str = "out"
    stop_threshold: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "topology": dict(self.topology),
            "problem": dict(self.problem),
            "algorithm": dict(self.algorithm),
            "sweep": {k: list(v) for k, v in self.sweep.items()},
            "points": [dict(p) for p in self.points],
            "output_dir": self.output_dir,
            "stop_threshold": self.stop_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        try:
            cfg = cls(
                name=data["name"],
                topology=dict(data["topology"]),
                problem=dict(data["problem"]),
                algorithm=dict(data["algorithm"]),
                sweep={k: list(v) for k, v in data.get("sweep", {}).items()},
                points=[dict(p) for p in data.get("points", [])],
                output_dir=data.get("output_dir", "out"),
                stop_threshold=data.get("stop_threshold"),
            )
        except KeyError as err:
            raise ConfigError(f"missing config section {err}") from err
        _validate(cfg)
        return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if ("ring" in cfg.topology) == ("edges" in cfg.topology):
        raise ConfigError("topology needs exactly one of 'ring' or 'edges'")
    for key in ("kind", "seed", "dimension", "points_per_agent"):
        if key not in cfg.problem:
            raise ConfigError(f"problem section is missing {key!r}")
    for axis, values in cfg.sweep.items():
        if axis not in _SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        if not values:
            raise ConfigError(f"sweep axis {axis!r} is empty")
    # constructing the run config validates the algorithm section
    make_run_config(cfg.algorithm, {})


def build_topology(spec: dict) -> Topology:
    if "ring" in spec:
        return build_ring(int(spec["ring"]))
    return build_from_edges(int(spec["n_agents"]), [tuple(e) for e in spec["edges"]])


def build_instance(spec: dict) -> ProblemInstance:
    return generate_classification(
        seed=int(spec["seed"]),
        n_agents=int(spec["n_agents"]),
        dimension=int(spec["dimension"]),
        points_per_agent=int(spec["points_per_agent"]),
        kind=spec["kind"],
        epsilon=float(spec.get("epsilon", 0.0)),
    )


def make_run_config(algorithm: dict, overrides: dict) -> RunConfig:
    merged = dict(algorithm)
    if "tg_tc_ratio" in overrides:
        ratio = float(overrides.pop("tg_tc_ratio"))
        merged["t_g"] = ratio
        merged["t_c"] = 1.0
    merged.update(overrides)
    try:
        return RunConfig(
            variant=merged["variant"],
            gamma=float(merged["gamma"]),
            rho=float(merged["rho"]),
            tau=int(merged["tau"]),
            outer_iterations=int(merged["outer_iterations"]),
            batch_size=int(merged.get("batch_size", 1)),
            master_seed=int(merged.get("master_seed", 0)),
            monte_carlo_runs=int(merged.get("monte_carlo_runs", 1)),
            t_g=float(merged.get("t_g", 1.0)),
            t_c=float(merged.get("t_c", 1.0)),
            batch_replacement=bool(merged.get("batch_replacement", True)),
            record_dk=bool(merged.get("record_dk", False)),
            init_std=float(merged.get("init_std", 10.0)),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid algorithm configuration: {err}") from err


def expand_grid(cfg: ExperimentConfig) -> list[dict]:
    """Override dict of every grid point, in deterministic order."""
    if cfg.points:
        return [dict(p) for p in cfg.points]
    axes = [(axis, cfg.sweep[axis]) for axis in _SWEEP_AXES if axis in cfg.sweep]
    if not axes:
        return [{}]
    names = [a for a, _ in axes]
    combos = product(*(values for _, values in axes))
    return [dict(zip(names, combo)) for combo in combos]


def _point_label(index: int, overrides: dict) -> str:
    parts = [f"point{index:03d}"]
    for key in sorted(overrides):
        value = overrides[key]
        parts.append(f"{key}-{value}")
    return "_".join(parts).replace("/", "-").replace(" ", "")


# --- INI parsing ---------------------------------------------------------

_BOOL_KEYS = {"record_dk", "batch_replacement"}
_INT_KEYS = {
    "tau",
    "batch_size",
    "outer_iterations",
    "master_seed",
    "monte_carlo_runs",
    "seed",
    "dimension",
    "points_per_agent",
    "n_agents",
    "ring",
}
_FLOAT_KEYS = {"gamma", "rho", "t_g", "t_c", "epsilon", "init_std", "stop_threshold"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean for {key!r}, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from err
    return raw


def _parse_edges(raw: str) -> list:
    edges = []
    for token in raw.replace(";", ",").split(","):
        token = token.strip()
        if not token:
            continue
        sep = "-" if "-" in token else " "
        try:
            i, j = (int(v) for v in token.split(sep))
        except ValueError as err:
            raise ConfigError(f"bad edge token {token!r}") from err
        edges.append((i, j))
    if not edges:
        raise ConfigError("edge list is empty")
    return edges


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    """Parse an INI experiment description."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config: {err}") from err

    def section(label: str, required: bool = True) -> dict:
        if not parser.has_section(label):
            if required:
                raise ConfigError(f"missing [{label}] section")
            return {}
        return {k: _convert(k, v) for k, v in parser.items(label)}

    topology = section("topology")
    if "edges" in topology:
        topology["edges"] = _parse_edges(parser.get("topology", "edges"))
    problem = section("problem")
    problem.setdefault("n_agents", topology.get("ring", topology.get("n_agents")))
    algorithm = section("algorithm")
    algorithm.update(section("cost", required=False))
    output = section("output", required=False)

    sweep: dict = {}
    if parser.has_section("sweep"):
        for axis, raw in parser.items("sweep"):
            values = [v.strip() for v in raw.split(",") if v.strip()]
            if axis not in _SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if not values:
                raise ConfigError(f"sweep axis {axis!r} is empty")
            if axis == "variant":
                sweep[axis] = values
            elif axis == "tau":
                sweep[axis] = [int(v) for v in values]
            else:
                sweep[axis] = [float(v) for v in values]

    experiment = section("experiment", required=False)
    cfg = ExperimentConfig(
        name=str(experiment.get("name", name)),
        topology=topology,
        problem=problem,
        algorithm=algorithm,
        sweep=sweep,
        output_dir=str(output.get("dir", "out")),
        stop_threshold=output.get("stop_threshold"),
    )
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    """Load an experiment config from an INI file or a previous manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return ExperimentConfig.from_dict(data["config"])
    return parse_config(path.read_text(), name=path.stem)


# --- execution -----------------------------------------------------------


@dataclass
class ExperimentResult:
    manifest: dict
    traces: list[Trace]
    output_dir: Path

    @property
    def all_points_diverged(self) -> bool:
        points = self.manifest["points"]
        return bool(points) and any(
            p["num_diverged"] == p["monte_carlo_runs"] for p in points
        )


def _execute_point(args) -> Trace:
    cfg_dict, overrides = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    instance = build_instance(cfg.problem)
    topology = build_topology(cfg.topology)
    run_cfg = make_run_config(cfg.algorithm, dict(overrides))
    return run(instance, topology, run_cfg)


def _write_csv(path: Path, trace: Trace, record_dk: bool) -> None:
    columns = list(_CSV_BASE_COLUMNS)
    if record_dk:
        columns.insert(4, "d_k_mean")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for rec in trace.records:
            row = [
                rec.k,
                repr(float(rec.model_time)),
                repr(float(rec.grad_norm_sq_mean)),
                repr(float(rec.grad_norm_sq_std)),
                repr(float(rec.consensus_err_mean)),
                rec.component_evals,
                rec.comms,
            ]
            if record_dk:
                row.insert(4, repr(float(rec.d_k_mean)))
            writer.writerow(row)


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Execute every grid point and persist CSV traces plus a manifest.

    Grid points are independent; with ``workers > 1`` they execute in a
    process pool, and results do not depend on the worker count.
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = expand_grid(cfg)
    if not grid:
        raise ConfigError("experiment grid is empty")

    jobs = [(cfg.to_dict(), overrides) for overrides in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(_execute_point, jobs))
    else:
        traces = [_execute_point(job) for job in jobs]

    points = []
    m_max = int(cfg.problem["points_per_agent"])
    for index, (overrides, trace) in enumerate(zip(grid, traces)):
        label = _point_label(index, overrides)
        csv_name = f"{cfg.name}_{label}.csv"
        record_dk = bool(trace.config.get("record_dk", False))
        _write_csv(out / csv_name, trace, record_dk)
        stopping = None
        if cfg.stop_threshold is not None:
            stopping = stopping_time(trace, float(cfg.stop_threshold))
            trace.stopping = {"threshold": float(cfg.stop_threshold), "hit": stopping}
        run_cfg = make_run_config(cfg.algorithm, dict(overrides))
        points.append(
            {
                "label": label,
                "overrides": dict(overrides),
                "csv": csv_name,
                "monte_carlo_runs": run_cfg.monte_carlo_runs,
                "num_diverged": trace.num_diverged,
                "stopping": stopping,
                "resolved": config_dict(run_cfg),
                "reference_charges": reference_charges(
                    run_cfg.cost_model(), run_cfg.tau, m_max
                ),
            }
        )

    manifest = {
        "version": __version__,
        "name": cfg.name,
        "config": cfg.to_dict(),
        "seeds": {
            "master_seed": int(cfg.algorithm.get("master_seed", 0)),
            "problem_seed": int(cfg.problem["seed"]),
        },
        "points": points,
    }
    manifest_path = out / f"{cfg.name}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return ExperimentResult(manifest=manifest, traces=traces, output_dir=out)


def stopping_time(trace: Trace, threshold: float) -> dict | None:
    """Model time at the first record whose mean squared gradient is below threshold.

    The stored series is re-scanned in iteration order with no hysteresis;
    returns None if the threshold is never crossed.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    for rec in trace.records:
        if rec.grad_norm_sq_mean < threshold:
            return {"k": rec.k, "model_time": rec.model_time}
    return None


# --- tuning and presets --------------------------------------------------


@dataclass(frozen=True)
class TuneResult:
    best_gamma: float
    scores: dict


def tune_gamma(
    instance: ProblemInstance,
    topology: Topology,
    base: RunConfig,
    gammas,
    budget_iterations: int,
    replicates: int = 3,
) -> TuneResult:
    """Geometric grid search: pick the step size with the lowest final metric.

    Each candidate runs a short budget; the score is the aggregated mean
    squared gradient at the final iteration (infinity if every replicate
    diverged).  Deterministic for a fixed base seed; ties go to the smaller
    candidate.
    """
    scores: dict = {}
    for gamma in gammas:
        candidate = replace(
            base,
            gamma=float(gamma),
            outer_iterations=budget_iterations,
            monte_carlo_runs=replicates,
        )
        trace = run(instance, topology, candidate)
        if not trace.records:
            scores[float(gamma)] = math.inf
        else:
            scores[float(gamma)] = trace.records[-1].grad_norm_sq_mean
    best = min(sorted(scores), key=lambda g: scores[g])
    return TuneResult(best_gamma=best, scores=scores)


# Benchmark problem shared by the presets: ring of 10 agents, 5 features,
# 100 points per agent, nonconvex regularization weight 0.01, unit batches,
# penalty 1.  Step sizes below were tuned by grid search on this data
# (lowest time to reach the stopping threshold; see tune_gamma).
_PRESET_PROBLEM = {
    "kind": "logistic_nonconvex",
    "seed": 31,
    "n_agents": 10,
    "dimension": 5,
    "points_per_agent": 100,
    "epsilon": 0.01,
}
_PRESET_TOPOLOGY = {"ring": 10}

FIG1_TUNED_GAMMA = {
    "lt_admm": 0.4,
    "lt_admm_vr": 0.8,
    "lt_admm_vr_v2": 0.8,
}

FIG2_TUNED_GAMMA = {
    2: 0.45,
    4: 0.6,
    5: 0.8,
    8: 0.45,
    10: 0.45,
    16: 0.45,
}


def preset_fig1(
    out_dir: str = "out_fig1",
    master_seed: int = 1,
    monte_carlo_runs: int = 20,
    outer_iterations: int = 800,
) -> ExperimentConfig:
    """Variant comparison on the benchmark problem across cost ratios.

    Emits one trace per (variant, gradient/communication cost ratio) pair;
    plotting mean squared gradient against model time reproduces the
    qualitative comparison of the three variants.  The iteration budget is a
    config value; the default shows both the plateau of the mini-batch
    variant and the convergence of the variance-reduced ones.
    """
    points = []
    for variant in ("lt_admm", "lt_admm_vr", "lt_admm_vr_v2"):
        for ratio in (0.1, 1.0, 10.0):
            points.append(
                {
                    "variant": variant,
                    "gamma": FIG1_TUNED_GAMMA[variant],
                    "tg_tc_ratio": ratio,
                }
            )
    return ExperimentConfig(
        name="fig1_comparison",
        topology=dict(_PRESET_TOPOLOGY),
        problem=dict(_PRESET_PROBLEM),
        algorithm={
            "variant": "lt_admm",
            "gamma": FIG1_TUNED_GAMMA["lt_admm"],
            "rho": 1.0,
            "tau": 5,
            "batch_size": 1,
            "outer_iterations": outer_iterations,
            "master_seed": master_seed,
            "monte_carlo_runs": monte_carlo_runs,
        },
        points=points,
        output_dir=out_dir,
    )


def preset_fig2(
    out_dir: str = "out_fig2",
    master_seed: int = 5,
    monte_carlo_runs: int = 4,
    outer_iterations: int = 1300,
) -> ExperimentConfig:
    """Local-step sweep: model time for the variance-reduced variant to reach 1e-9.

    One grid point per local step count, each with its tuned step size; the
    manifest's stopping entries give the time-to-threshold curve.
    """
    points = [
        {"tau": tau, "gamma": FIG2_TUNED_GAMMA[tau]} for tau in sorted(FIG2_TUNED_GAMMA)
    ]
    return ExperimentConfig(
        name="fig2_tau_sweep",
        topology=dict(_PRESET_TOPOLOGY),
        problem=dict(_PRESET_PROBLEM),
        algorithm={
            "variant": "lt_admm_vr",
            "gamma": FIG2_TUNED_GAMMA[5],
            "rho": 1.0,
            "tau": 5,
            "batch_size": 1,
            "outer_iterations": outer_iterations,
            "master_seed": master_seed,
            "monte_carlo_runs": monte_carlo_runs,
            "t_g": 1.0,
            "t_c": 10.0,
        },
        points=points,
        output_dir=out_dir,
        stop_threshold=1e-9,
    )
