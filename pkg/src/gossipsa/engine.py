"""The local-step / gossip-step recursion and its Polyak average.

States are arrays of shape ``(N, d)``: row i is agent i's estimate, and
``theta.reshape(-1)`` is the stacked R^{dN} vector. Batches of replicas
carry a leading axis, ``(R, N, d)``.

Seeding. A root seed is split with :class:`numpy.random.SeedSequence`:
``SeedSequence(root).spawn(n_runs)[r].spawn(3)`` gives replica r its
(gossip, observation, initialization) streams. A single trajectory run with
root seed s is replica 0 of an ensemble with root seed s. Random numbers are
drawn per replica in fixed blocks of ``BLOCK`` steps, so a replica's path
does not depend on how replicas are batched or split across workers.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DivergenceError
from .gossip import GossipScheme
from .problems import ProblemModel, apply_matrix

log = logging.getLogger(__name__)

BLOCK = 256
DIVERGENCE_BOUND = 1e12
GAIN_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class StepSchedule:
    """gamma_n = gamma0 / n**xi with xi in (1/2, 1]."""

    gamma0: float
    xi: float

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")
        if not 0.5 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (1/2, 1], got {self.xi}")

    def __call__(self, n):
        return self.gamma0 / np.asarray(n, dtype=float) ** self.xi

    @property
    def regime(self) -> str:
        """'critical' for gamma0/n (log-ratio ~ gamma/gamma0), else 'subcritical'."""
        return "critical" if self.xi == 1.0 else "subcritical"

    @property
    def gamma_star(self) -> float | None:
        return self.gamma0 if self.regime == "critical" else None


# --------------------------------------------------------------------------
# single-step operations


def consensus_mean(theta: np.ndarray) -> np.ndarray:
    return np.asarray(theta, dtype=float).mean(axis=-2)


def disagreement(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta - consensus_mean(theta)[..., None, :]


def _check_iterate_args(theta, w, y):
    theta = np.asarray(theta, dtype=float)
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta.ndim != 2:
        raise ValueError("theta must have shape (N, d)")
    n = theta.shape[0]
    if w.shape != (n, n):
        raise ValueError(f"W must be {n} x {n}, got {w.shape}")
    if y.shape != theta.shape:
        raise ValueError(f"Y must have shape {theta.shape}, got {y.shape}")
    return theta, w, y


def iterate(theta, w, y, gamma: float) -> np.ndarray:
    """(W (x) I_d)(theta + gamma Y), computed blockwise as W @ (theta + gamma Y)."""
    theta, w, y = _check_iterate_args(theta, w, y)
    return w @ (theta + gamma * y)


def check_gain(gain) -> np.ndarray:
    gain = np.atleast_2d(np.asarray(gain, dtype=float))
    if gain.shape[0] != gain.shape[1]:
        raise ValueError("the gain must be a square matrix")
    if not np.isfinite(np.linalg.cond(gain)) or np.linalg.cond(gain) >= GAIN_CONDITION_LIMIT:
        raise ValueError("the gain matrix is singular or too ill-conditioned")
    return gain


def iterate_with_gain(theta, w, y, gamma: float, gain) -> np.ndarray:
    """Same as :func:`iterate` with each agent's increment gamma * Gain @ Y_i."""
    theta, w, y = _check_iterate_args(theta, w, y)
    gain = check_gain(gain)
    if gain.shape[0] != theta.shape[1]:
        raise ValueError("gain dimension does not match d")
    return w @ (theta + gamma * apply_matrix(gain, y))


# --------------------------------------------------------------------------
# initialization and record plans


@dataclass(frozen=True)
class BoxInit:
    """Each agent uniform in the box [low, high]^d."""

    low: float
    high: float

    def draw(self, rng, n_agents, dim, theta_star=None):
        return rng.uniform(self.low, self.high, size=(n_agents, dim))


@dataclass(frozen=True)
class NearStarInit:
    """theta* plus a per-agent perturbation uniform in a cube of half-width ``radius``."""

    radius: float

    def draw(self, rng, n_agents, dim, theta_star=None):
        if theta_star is None:
            raise ValueError("near-theta* initialization needs a problem with theta*")
        return theta_star + rng.uniform(-self.radius, self.radius, size=(n_agents, dim))


@dataclass(frozen=True, eq=False)
class ExplicitInit:
    theta: np.ndarray

    def draw(self, rng, n_agents, dim, theta_star=None):
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (n_agents, dim):
            raise ValueError(f"explicit init must have shape ({n_agents}, {dim})")
        return theta.copy()


def log_record_plan(n_steps: int, per_decade: int = 10) -> np.ndarray:
    """Roughly log-spaced steps in [1, n_steps], always including n_steps."""
    if n_steps < 1:
        return np.zeros(0, dtype=np.int64)
    k = int(np.ceil(np.log10(n_steps) * per_decade)) + 1
    steps = np.unique(np.round(np.logspace(0, np.log10(n_steps), k)).astype(np.int64))
    return np.union1d(steps, [n_steps])


def every_record_plan(n_steps: int, every: int = 1) -> np.ndarray:
    steps = np.arange(every, n_steps + 1, every, dtype=np.int64)
    if n_steps >= 1:
        steps = np.union1d(steps, [n_steps])
    return steps


def replica_seeds(root_seed: int, n_runs: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(root_seed).spawn(n_runs)


def replica_streams(seed: np.random.SeedSequence) -> list[np.random.SeedSequence]:
    """The (gossip, observation, initialization) children of a replica seed.

    Same as a first ``seed.spawn(3)``, but stateless: calling it twice on
    one seed object gives the same streams.
    """
    return [
        np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, k), pool_size=seed.pool_size)
        for k in range(3)
    ]


# --------------------------------------------------------------------------
# records


@dataclass
class RunRecord:
    """Diagnostics of one trajectory at the recorded steps."""

    steps: np.ndarray
    mean: np.ndarray
    disagreement_norm: np.ndarray
    noise_disagreement_sq: np.ndarray
    lyapunov: np.ndarray | None = None
    avg_mean: np.ndarray | None = None
    sq_error_per_node: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    avg_snapshots: np.ndarray | None = None

    def header(self) -> list[str]:
        d = self.mean.shape[1]
        cols = ["step", *[f"mean_{k + 1}" for k in range(d)], "disagreement_norm", "lyapunov"]
        cols += [f"avg_mean_{k + 1}" for k in range(d)]
        if self.sq_error_per_node is not None:
            cols.append("sq_error_per_node")
        return cols

    def rows(self):
        d = self.mean.shape[1]
        for s in range(len(self.steps)):
            row = [str(int(self.steps[s]))]
            row += [_fmt(v) for v in self.mean[s]]
            row.append(_fmt(self.disagreement_norm[s]))
            row.append("" if self.lyapunov is None else _fmt(self.lyapunov[s]))
            row += [""] * d if self.avg_mean is None else [_fmt(v) for v in self.avg_mean[s]]
            if self.sq_error_per_node is not None:
                row.append(_fmt(self.sq_error_per_node[s]))
            yield row

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        writer.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class EnsembleResult:
    """Per-replica diagnostics; replicas that diverged carry NaN after their divergence step."""

    steps: np.ndarray
    mean: np.ndarray  # (R, S, d)
    disagreement_norm: np.ndarray  # (R, S)
    noise_disagreement_sq: np.ndarray  # (R, S)
    lyapunov: np.ndarray | None
    avg_mean: np.ndarray | None
    sq_error_per_node: np.ndarray | None
    snapshots: np.ndarray | None
    avg_snapshots: np.ndarray | None
    final_theta: np.ndarray  # (R, N, d)
    final_avg: np.ndarray | None
    init_theta: np.ndarray
    diverged_at: np.ndarray  # (R,), 0 when the replica stayed finite
    n_steps: int = 0

    @property
    def n_runs(self) -> int:
        return len(self.diverged_at)

    @property
    def finite(self) -> np.ndarray:
        return self.diverged_at == 0

    def record(self, r: int) -> RunRecord:
        def pick(a):
            return None if a is None else a[r]

        return RunRecord(
            steps=self.steps,
            mean=self.mean[r],
            disagreement_norm=self.disagreement_norm[r],
            noise_disagreement_sq=self.noise_disagreement_sq[r],
            lyapunov=pick(self.lyapunov),
            avg_mean=pick(self.avg_mean),
            sq_error_per_node=pick(self.sq_error_per_node),
            snapshots=pick(self.snapshots),
            avg_snapshots=pick(self.avg_snapshots),
        )

    @staticmethod
    def concatenate(parts: list[EnsembleResult]) -> EnsembleResult:
        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        names = [
            "mean", "disagreement_norm", "noise_disagreement_sq", "lyapunov", "avg_mean",
            "sq_error_per_node", "snapshots", "avg_snapshots", "final_theta", "final_avg",
            "init_theta", "diverged_at",
        ]
        return replace(parts[0], **{k: cat(k) for k in names})


# --------------------------------------------------------------------------
# the recursion


@dataclass
class RunOptions:
    averaging: bool = True
    gain: np.ndarray | None = None
    snapshots: bool = False
    record_lyapunov: bool = True


def run_ensemble(
    problem: ProblemModel,
    scheme: GossipScheme,
    schedule: StepSchedule,
    n_steps: int,
    init,
    seeds: list[np.random.SeedSequence],
    record_at=None,
    options: RunOptions | None = None,
    workers: int = 1,
) -> EnsembleResult:
    """Run one replica per seed, vectorized across replicas.

    ``init`` is an initializer (:class:`BoxInit`, :class:`NearStarInit`,
    :class:`ExplicitInit`). With ``workers > 1`` replicas are split into
    contiguous blocks run in separate processes; results are identical.
    """
    options = options or RunOptions()
    if scheme.n_nodes != problem.n_agents:
        raise ValueError(
            f"scheme has {scheme.n_nodes} nodes but the problem has {problem.n_agents} agents"
        )
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    record_at = log_record_plan(n_steps) if record_at is None else np.asarray(record_at, np.int64)
    record_at = np.unique(record_at)
    if record_at.size and (record_at[0] < 1 or record_at[-1] > n_steps):
        raise ValueError("record steps must lie in [1, n_steps]")
    gain = None if options.gain is None else check_gain(options.gain)
    if gain is not None and gain.shape[0] != problem.dim:
        raise ValueError("gain dimension does not match the problem dimension")
    options = replace(options, gain=gain)

    seeds = list(seeds)
    workers = max(1, min(int(workers), len(seeds)))
    if workers == 1:
        return _run_block(problem, scheme, schedule, n_steps, init, seeds, record_at, options)
    bounds = np.linspace(0, len(seeds), workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _run_block, problem, scheme, schedule, n_steps, init,
                seeds[a:b], record_at, options,
            )
            for a, b in zip(bounds[:-1], bounds[1:])
        ]
        parts = [f.result() for f in futures]
    return EnsembleResult.concatenate(parts)


def _run_block(problem, scheme, schedule, n_steps, init, seeds, record_at, options):
    n_runs = len(seeds)
    n, d = problem.n_agents, problem.dim
    streams = [replica_streams(s) for s in seeds]
    gossip_rngs = [np.random.default_rng(s[0]) for s in streams]
    obs_rngs = [np.random.default_rng(s[1]) for s in streams]
    theta_star = getattr(problem, "theta_star", None)

    theta = np.empty((n_runs, n, d))
    for r, s in enumerate(streams):
        theta[r] = init.draw(np.random.default_rng(s[2]), n, d, theta_star)
    init_theta = theta.copy()
    avg = np.zeros_like(theta) if options.averaging else None
    diverged_at = np.zeros(n_runs, dtype=np.int64)

    n_rec = len(record_at)
    rec = {
        "mean": np.full((n_runs, n_rec, d), np.nan),
        "dis": np.full((n_runs, n_rec), np.nan),
        "ydis": np.full((n_runs, n_rec), np.nan),
        "lyap": np.full((n_runs, n_rec), np.nan) if options.record_lyapunov else None,
        "avg": np.full((n_runs, n_rec, d), np.nan) if options.averaging else None,
        "sqerr": np.full((n_runs, n_rec), np.nan) if theta_star is not None else None,
        "snap": np.full((n_runs, n_rec, n, d), np.nan) if options.snapshots else None,
        "avgsnap": (
            np.full((n_runs, n_rec, n, d), np.nan)
            if options.snapshots and options.averaging
            else None
        ),
    }
    next_rec = 0
    noise_shape = problem.noise_shape
    gain = options.gain

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for start in range(1, n_steps + 1, BLOCK):
            steps = np.arange(start, min(start + BLOCK, n_steps + 1))
            length = len(steps)
            acts = np.empty((length, n_runs), dtype=np.intp)
            noise = np.empty((length, n_runs, *noise_shape))
            for r in range(n_runs):
                acts[:, r] = scheme.draw(gossip_rngs[r], steps)
                noise[:, r] = obs_rngs[r].standard_normal((length, *noise_shape))
            gammas = schedule(steps)

            for k in range(length):
                step = int(steps[k])
                y = problem.observations(theta, noise[k])
                if gain is not None:
                    y = apply_matrix(gain, y)
                theta += gammas[k] * y
                scheme.apply(theta, acts[k])
                if avg is not None:
                    avg += (theta - avg) / step

                bad = ~(np.abs(theta) <= DIVERGENCE_BOUND).all(axis=(1, 2))
                if bad.any():
                    newly = bad & (diverged_at == 0)
                    diverged_at[newly] = step
                    # park diverged replicas on their (finite) initial state
                    theta[bad] = init_theta[bad]
                    if avg is not None:
                        avg[bad] = init_theta[bad]

                if next_rec < n_rec and step == record_at[next_rec]:
                    _record(rec, next_rec, problem, theta, avg, y, theta_star)
                    next_rec += 1

    dead = diverged_at > 0
    if dead.any():
        for r in np.flatnonzero(dead):
            after = record_at >= diverged_at[r]
            for arr in rec.values():
                if arr is not None:
                    arr[r, after] = np.nan
        theta[dead] = np.nan
        if avg is not None:
            avg[dead] = np.nan

    return EnsembleResult(
        steps=record_at,
        mean=rec["mean"],
        disagreement_norm=rec["dis"],
        noise_disagreement_sq=rec["ydis"],
        lyapunov=rec["lyap"],
        avg_mean=rec["avg"],
        sq_error_per_node=rec["sqerr"],
        snapshots=rec["snap"],
        avg_snapshots=rec["avgsnap"],
        final_theta=theta,
        final_avg=avg,
        init_theta=init_theta,
        diverged_at=diverged_at,
        n_steps=n_steps,
    )


def _record(rec, s, problem, theta, avg, y, theta_star):
    mean = theta.mean(axis=1)
    rec["mean"][:, s] = mean
    rec["dis"][:, s] = np.sqrt(np.sum((theta - mean[:, None, :]) ** 2, axis=(1, 2)))
    rec["ydis"][:, s] = np.sum((y - y.mean(axis=1, keepdims=True)) ** 2, axis=(1, 2))
    if rec["lyap"] is not None:
        rec["lyap"][:, s] = problem.lyapunov(mean)
    if rec["avg"] is not None:
        rec["avg"][:, s] = avg.mean(axis=1)
    if rec["sqerr"] is not None:
        rec["sqerr"][:, s] = np.sum((theta - theta_star) ** 2, axis=(1, 2)) / theta.shape[1]
    if rec["snap"] is not None:
        rec["snap"][:, s] = theta
    if rec["avgsnap"] is not None:
        rec["avgsnap"][:, s] = avg


@dataclass
class Trajectory:
    record: RunRecord
    theta: np.ndarray
    avg: np.ndarray | None
    init: np.ndarray = field(repr=False)


def run_trajectory(
    problem: ProblemModel,
    scheme: GossipScheme,
    schedule: StepSchedule,
    n_steps: int,
    init,
    root_seed: int,
    record_at=None,
    options: RunOptions | None = None,
) -> Trajectory:
    """One trajectory; identical to replica 0 of an ensemble with the same root seed.

    Raises :class:`DivergenceError` if the iterates leave the finite region.
    """
    res = run_ensemble(
        problem, scheme, schedule, n_steps, init, replica_seeds(root_seed, 1)[:1],
        record_at=record_at, options=options,
    )
    if res.diverged_at[0]:
        raise DivergenceError(int(res.diverged_at[0]))
    return Trajectory(
        record=res.record(0),
        theta=res.final_theta[0],
        avg=None if res.final_avg is None else res.final_avg[0],
        init=res.init_theta[0],
    )
