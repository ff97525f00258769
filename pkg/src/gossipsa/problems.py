"""Observation models mu_theta with their mean fields and CLT data.

All batch methods take agent states shaped ``(..., N, d)`` and standard
normal draws shaped ``(..., *noise_shape)``; separating the randomness from
the transformation lets the engine pre-draw noise in blocks per replica.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError, SingularityError

SENSOR_GUARD = 1e-9


def apply_matrix(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Row-vector product ``x @ m.T`` over the last axis, in a fixed summation order.

    Written as an explicit sum so results do not depend on the batch shape
    (BLAS kernels may block differently for different leading dimensions).
    """
    m = np.asarray(m, dtype=float)
    out = x[..., 0:1] * m[:, 0]
    for j in range(1, m.shape[1]):
        out = out + x[..., j : j + 1] * m[:, j]
    return out


class ProblemModel(abc.ABC):
    dim: int
    n_agents: int
    theta_star: np.ndarray | None

    @property
    @abc.abstractmethod
    def noise_shape(self) -> tuple[int, ...]: ...

    @abc.abstractmethod
    def observations(self, theta: np.ndarray, noise: np.ndarray) -> np.ndarray:
        """Y given agent states and standard normal draws."""

    @abc.abstractmethod
    def mean_field(self, theta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def lyapunov(self, theta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def clt_data(self) -> tuple[np.ndarray, np.ndarray]:
        """(grad h(theta*), Upsilon)."""

    def sample_observations(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        self._check_state(theta)
        return self.observations(theta, rng.standard_normal(self.noise_shape))

    def _check_state(self, theta):
        if theta.shape[-2:] != (self.n_agents, self.dim):
            raise ValueError(
                f"expected agent states of shape (..., {self.n_agents}, {self.dim}), got {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("agent states must be finite")


@dataclass(frozen=True, eq=False)
class QuadraticGaussianProblem(ProblemModel):
    """Y_i = -A (theta_i - theta*) + noise_std * standard normal, per agent."""

    A: np.ndarray
    theta_star: np.ndarray
    noise_std: float
    n_agents: int

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        star = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        if a.shape != (star.size, star.size):
            raise ConfigurationError("A must be d x d with d = len(theta_star)")
        if np.linalg.eigvals(-a).real.max() >= 0:
            raise ConfigurationError("-A must be Hurwitz")
        if self.noise_std < 0 or self.n_agents < 1:
            raise ConfigurationError("need noise_std >= 0 and n_agents >= 1")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "theta_star", star)

    @property
    def dim(self) -> int:
        return self.theta_star.size

    @property
    def noise_shape(self):
        return (self.n_agents, self.dim)

    def observations(self, theta, noise):
        return self.noise_std * noise - apply_matrix(self.A, theta - self.theta_star)

    def mean_field(self, theta):
        return -apply_matrix(self.A, np.asarray(theta, dtype=float) - self.theta_star)

    def lyapunov(self, theta):
        return np.sum((np.asarray(theta, dtype=float) - self.theta_star) ** 2, axis=-1)

    def clt_data(self):
        return -self.A.copy(), (self.noise_std**2 / self.n_agents) * np.eye(self.dim)


def uniform_layout(n: int, seed: int, box=(0.0, 50.0)) -> np.ndarray:
    """Sensor positions drawn uniformly in the square ``box x box``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(box[0], box[1], size=(n, 2))


@dataclass(frozen=True, eq=False)
class LocalizationProblem(ProblemModel):
    """Planar source localization from noisy received signal strength.

    Sensor i observes X_i ~ Normal(g_i(theta*), obs_var) with
    g_i(theta) = amplitude / |theta - r_i|^2, and agent i's increment is
    the score of its local likelihood at its own estimate.
    """

    sensors: np.ndarray
    source: np.ndarray
    obs_var: float = 1e-2
    amplitude: float = 1000.0
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        r = np.asarray(self.sensors, dtype=float)
        src = np.asarray(self.source, dtype=float)
        if r.ndim != 2 or r.shape[1] != 2 or src.shape != (2,):
            raise ConfigurationError("sensors must be (N, 2) and source a planar point")
        if self.obs_var <= 0:
            raise ConfigurationError("obs_var must be positive")
        if len(r) > 1:
            gaps = np.linalg.norm(r[:, None] - r[None], axis=-1) + np.eye(len(r))
            if gaps.min() < SENSOR_GUARD:
                raise ConfigurationError("sensor positions must be pairwise distinct")
        if np.linalg.norm(r - src, axis=1).min() < SENSOR_GUARD:
            raise ConfigurationError("the source coincides with a sensor")
        object.__setattr__(self, "sensors", r)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "_g_star", self._signal(src[None, :]))

    @property
    def n_agents(self) -> int:
        return len(self.sensors)

    @property
    def theta_star(self):
        return self.source

    @property
    def noise_shape(self):
        return (self.n_agents,)

    def _guard(self, d2, agentwise):
        if d2.min() >= SENSOR_GUARD**2:
            return
        per_sensor = d2.reshape(-1, d2.shape[-1]).min(axis=0)
        bad = np.flatnonzero(per_sensor < SENSOR_GUARD**2)
        if bad.size:
            i = int(bad[0])
            raise SingularityError(
                agent=i if agentwise else None, sensor=i, distance=float(np.sqrt(per_sensor[i]))
            )

    def _signal(self, theta, agentwise=True):
        d2 = np.sum((theta - self.sensors) ** 2, axis=-1)
        self._guard(d2, agentwise)
        return self.amplitude / d2

    def signal_gradient(self, theta, agentwise=True):
        """grad g_i evaluated at ``theta`` (broadcast against the sensors)."""
        diff = theta - self.sensors
        d2 = np.sum(diff**2, axis=-1)
        self._guard(d2, agentwise)
        return (-2.0 * self.amplitude) * diff / (d2 * d2)[..., None]

    def observations(self, theta, noise):
        diff = theta - self.sensors
        d2 = np.sum(diff**2, axis=-1)
        self._guard(d2, agentwise=True)
        g = self.amplitude / d2
        grad = (-2.0 * self.amplitude) * diff / (d2 * d2)[..., None]
        x = self._g_star + np.sqrt(self.obs_var) * noise
        return ((x - g) / self.obs_var)[..., None] * grad

    def observations_from_signal(self, theta, x):
        """Scores for explicit measurements ``x`` (one per sensor)."""
        theta = np.asarray(theta, dtype=float)
        g = self._signal(theta)
        return ((np.asarray(x) - g) / self.obs_var)[..., None] * self.signal_gradient(theta)

    def _at_common_point(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[..., None, :]

    def mean_field(self, theta):
        th = self._at_common_point(theta)
        g = self._signal(th, agentwise=False)
        grad = self.signal_gradient(th, agentwise=False)
        return np.mean(((self._g_star - g) / self.obs_var)[..., None] * grad, axis=-2)

    def lyapunov(self, theta):
        """Gaussian Kullback-Leibler divergence up to an additive constant."""
        g = self._signal(self._at_common_point(theta), agentwise=False)
        return np.sum((self._g_star - g) ** 2, axis=-1) / (2.0 * self.obs_var)

    def fisher_information(self, theta=None) -> np.ndarray:
        th = self.source if theta is None else np.asarray(theta, dtype=float)
        grad = self.signal_gradient(th[None, :], agentwise=False)
        f = grad.T @ grad / self.obs_var
        return 0.5 * (f + f.T)

    def clt_data(self):
        f = self.fisher_information()
        n = self.n_agents
        return -f / n, f / n**2


def check_clt_data(problem: ProblemModel):
    if getattr(problem, "theta_star", None) is None:
        raise PreconditionError("the problem does not expose an equilibrium theta*")
    return problem.clt_data()
