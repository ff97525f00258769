"""Experiment configuration files (TOML).

Blocks: ``[problem]``, ``[scheme]``, ``[schedule]``, ``[run]``, ``[output]``.
Defaults reproduce the planar localization experiment: 40 sensors in
[0, 50]^2, pairwise gossip on a geometric graph, gamma_n = 1e-3 / n**0.7,
50 000 steps. Nodes in explicit edge lists are numbered from 1.

Seeds: ``run.root_seed`` is mandatory. Replica r uses
``SeedSequence(root_seed).spawn(n_runs)[r].spawn(3)`` for its
(gossip, observation, initialization) streams.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import BoxInit, ExplicitInit, NearStarInit, StepSchedule, every_record_plan, log_record_plan
from .errors import ConfigurationError
from .gossip import Broadcast, Dropout, GossipScheme, Identity, NetworkGraph, Pairwise, VanishingRate
from .problems import LocalizationProblem, ProblemModel, QuadraticGaussianProblem, uniform_layout

DEFAULT_SOURCE = (23.0, 34.5)
DEFAULT_LAYOUT_SEED = 398
DEFAULT_RADIUS = 14.0


@dataclass
class ProblemConfig:
    kind: str = "localization"
    A: list | float | None = None
    theta_star: list | float | None = None
    noise_std: float = 1.0
    n_agents: int = 40
    sensors: list | None = None
    source: list = field(default_factory=lambda: list(DEFAULT_SOURCE))
    obs_var: float = 1e-2
    layout_seed: int = DEFAULT_LAYOUT_SEED
    box: list = field(default_factory=lambda: [0.0, 50.0])


@dataclass
class SchemeConfig:
    kind: str = "pairwise"
    beta: float = 0.5
    dropout_p: float | None = None
    vanish_p0: float | None = None
    vanish_eta: float = 0.0
    graph: str | list = "geometric"
    radius: float = DEFAULT_RADIUS
    seed: int | None = None
    rows: int | None = None
    cols: int | None = None


@dataclass
class ScheduleConfig:
    gamma0: float = 1e-3
    xi: float = 0.7


@dataclass
class RunConfig:
    root_seed: int
    n_steps: int = 50_000
    n_runs: int = 180
    record: str | list = "log"
    record_every: int = 1
    averaging: bool = True
    gain: str | list | None = None  # None, "optimal" or an explicit d x d matrix
    init: str = "box"  # box | near_star | explicit
    init_box: list | None = None
    init_radius: float | None = None
    init_theta: list | None = None
    snapshots: bool = False


@dataclass
class OutputConfig:
    directory: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    problem: ProblemConfig
    scheme: SchemeConfig
    schedule: ScheduleConfig
    run: RunConfig
    output: OutputConfig


def _block(cls, data, name):
    data = dict(data or {})
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"[{name}]: {exc}") from None


def parse_config(data: dict) -> ExperimentConfig:
    unknown = set(data) - {"problem", "scheme", "schedule", "run", "output"}
    if unknown:
        raise ConfigurationError(f"unknown blocks: {sorted(unknown)}")
    run = data.get("run", {})
    if "root_seed" not in run:
        raise ConfigurationError("run.root_seed is mandatory")
    cfg = ExperimentConfig(
        problem=_block(ProblemConfig, data.get("problem"), "problem"),
        scheme=_block(SchemeConfig, data.get("scheme"), "scheme"),
        schedule=_block(ScheduleConfig, data.get("schedule"), "schedule"),
        run=_block(RunConfig, run, "run"),
        output=_block(OutputConfig, data.get("output"), "output"),
    )
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML in {path}: {exc}") from None
    return parse_config(data)


# --------------------------------------------------------------------------
# builders


def build_problem(cfg: ProblemConfig) -> ProblemModel:
    if cfg.kind == "quadratic":
        star = np.atleast_1d(np.asarray(0.0 if cfg.theta_star is None else cfg.theta_star, float))
        a = np.eye(star.size) if cfg.A is None else np.atleast_2d(np.asarray(cfg.A, float))
        return QuadraticGaussianProblem(a, star, float(cfg.noise_std), int(cfg.n_agents))
    if cfg.kind == "localization":
        if cfg.sensors is not None:
            sensors = np.asarray(cfg.sensors, float)
        else:
            sensors = uniform_layout(int(cfg.n_agents), int(cfg.layout_seed), tuple(cfg.box))
        return LocalizationProblem(sensors, np.asarray(cfg.source, float), obs_var=float(cfg.obs_var))
    raise ConfigurationError(f"unknown problem kind {cfg.kind!r}")


def build_graph(cfg: SchemeConfig, n: int, coords=None) -> NetworkGraph:
    g = cfg.graph
    if isinstance(g, list):
        edges = []
        for e in g:
            if len(e) != 2:
                raise ConfigurationError(f"edge {e!r} must list two nodes")
            i, j = int(e[0]) - 1, int(e[1]) - 1
            edges.append((i, j))
        return NetworkGraph(n, edges, coords)
    if g == "complete":
        return NetworkGraph.complete(n)
    if g == "path":
        return NetworkGraph.path(n)
    if g == "grid":
        if cfg.rows is None or cfg.cols is None or cfg.rows * cfg.cols != n:
            raise ConfigurationError("grid graphs need rows * cols == number of agents")
        return NetworkGraph.grid(cfg.rows, cfg.cols)
    if g == "geometric":
        if cfg.seed is not None:
            return NetworkGraph.random_geometric(n, cfg.radius, cfg.seed)
        if coords is None:
            raise ConfigurationError("geometric graph needs sensor coordinates or a seed")
        return NetworkGraph.geometric(coords, cfg.radius)
    raise ConfigurationError(f"unknown graph {g!r}")


def build_scheme(cfg: SchemeConfig, problem: ProblemModel) -> GossipScheme:
    n = problem.n_agents
    if cfg.kind == "identity":
        return Identity(n)
    coords = getattr(problem, "sensors", None)
    graph = build_graph(cfg, n, coords)
    if cfg.kind == "pairwise":
        base = Pairwise(graph)
    elif cfg.kind == "broadcast":
        base = Broadcast(graph, cfg.beta)
    else:
        raise ConfigurationError(f"unknown scheme kind {cfg.kind!r}")
    if cfg.dropout_p is not None and cfg.vanish_p0 is not None:
        raise ConfigurationError("dropout_p and vanish_p0 are mutually exclusive")
    if cfg.dropout_p is not None:
        return Dropout(base, cfg.dropout_p)
    if cfg.vanish_p0 is not None:
        return VanishingRate(base, p0=cfg.vanish_p0, eta=cfg.vanish_eta)
    return base


def build_schedule(cfg: ScheduleConfig) -> StepSchedule:
    try:
        return StepSchedule(float(cfg.gamma0), float(cfg.xi))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None


def build_init(cfg: RunConfig, problem: ProblemModel, schedule: StepSchedule):
    if cfg.init == "box":
        box = cfg.init_box
        if box is None:
            box = [0.0, 50.0] if isinstance(problem, LocalizationProblem) else [-1.0, 1.0]
        return BoxInit(float(box[0]), float(box[1]))
    if cfg.init == "near_star":
        radius = cfg.init_radius if cfg.init_radius is not None else 0.1 * float(np.sqrt(schedule(1)))
        return NearStarInit(float(radius))
    if cfg.init == "explicit":
        if cfg.init_theta is None:
            raise ConfigurationError("explicit init needs run.init_theta")
        return ExplicitInit(np.asarray(cfg.init_theta, float))
    raise ConfigurationError(f"unknown init {cfg.init!r}")


def build_record_plan(cfg: RunConfig) -> np.ndarray:
    n = cfg.n_steps
    if isinstance(cfg.record, list):
        plan = np.asarray(cfg.record, dtype=np.int64)
        plan = plan[(plan >= 1) & (plan <= n)]
        return np.unique(plan)
    if cfg.record == "log":
        return log_record_plan(n)
    if cfg.record == "every":
        return every_record_plan(n, cfg.record_every)
    if cfg.record == "final":
        return np.asarray([n] if n >= 1 else [], dtype=np.int64)
    raise ConfigurationError(f"unknown record plan {cfg.record!r}")


@dataclass
class Experiment:
    config: ExperimentConfig
    problem: ProblemModel
    scheme: GossipScheme
    schedule: StepSchedule
    init: object
    record_at: np.ndarray


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Validate every block and build the objects; raises ConfigurationError."""
    if cfg.run.n_steps < 0 or cfg.run.n_runs < 1:
        raise ConfigurationError("need n_steps >= 0 and n_runs >= 1")
    try:
        problem = build_problem(cfg.problem)
        scheme = build_scheme(cfg.scheme, problem)
        schedule = build_schedule(cfg.schedule)
        init = build_init(cfg.run, problem, schedule)
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return Experiment(cfg, problem, scheme, schedule, init, build_record_plan(cfg.run))


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    path = Path(override if override is not None else cfg.output.directory)
    path.mkdir(parents=True, exist_ok=True)
    return path
