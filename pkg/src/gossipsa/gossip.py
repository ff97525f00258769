"""Random gossip matrices: graphs, schemes, sampling and exact expectations.

A scheme is a finite distribution over row-stochastic N x N matrices. Each
base scheme (pairwise, broadcast, identity) is indexed by an *activation*:
an edge for pairwise gossip, a waking node for broadcast gossip. Wrappers
(dropout, vanishing rate) mix the base scheme with the identity, so every
sample is described by an integer activation where ``-1`` means "no
exchange this step". The simulation engine draws activations in blocks and
applies them without ever forming the matrices; :func:`sample_gossip`,
:func:`expected_matrix` and :func:`contraction_coefficient` work with the
dense matrices directly.

Nodes are numbered from 0.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import pdist, squareform

from .errors import ConfigurationError

STOCHASTIC_TOL = 1e-12


# --------------------------------------------------------------------------
# graphs


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Undirected simple graph on ``n_nodes`` nodes.

    ``coords`` optionally carries planar node positions; only the
    localization problem and geometric constructors use them.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    coords: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ConfigurationError("a graph needs at least one node")
        canon = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ConfigurationError(f"self-loop on node {i}")
            if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                raise ConfigurationError(f"edge ({i}, {j}) out of range for {self.n_nodes} nodes")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=float)
            if coords.shape != (self.n_nodes, 2):
                raise ConfigurationError("coords must have shape (n_nodes, 2)")
            object.__setattr__(self, "coords", coords)

    @classmethod
    def complete(cls, n: int) -> NetworkGraph:
        return cls(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n: int) -> NetworkGraph:
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def grid(cls, rows: int, cols: int) -> NetworkGraph:
        def idx(r, c):
            return r * cols + c

        edges = []
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    edges.append((idx(r, c), idx(r, c + 1)))
                if r + 1 < rows:
                    edges.append((idx(r, c), idx(r + 1, c)))
        return cls(rows * cols, tuple(edges))

    @classmethod
    def geometric(cls, coords, radius: float) -> NetworkGraph:
        """Connect every pair of points at Euclidean distance <= ``radius``."""
        coords = np.asarray(coords, dtype=float)
        n = len(coords)
        if n < 2:
            return cls(n, (), coords)
        dist = squareform(pdist(coords))
        ii, jj = np.nonzero(np.triu(dist <= radius, k=1))
        return cls(n, tuple(zip(ii.tolist(), jj.tolist())), coords)

    @classmethod
    def random_geometric(cls, n: int, radius: float, seed: int, box=(0.0, 50.0)) -> NetworkGraph:
        rng = np.random.default_rng(seed)
        return cls.geometric(rng.uniform(box[0], box[1], size=(n, 2)), radius)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=np.intp).reshape(-1, 2)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        e = self.edge_array
        adj[e[:, 0], e[:, 1]] = True
        adj[e[:, 1], e[:, 0]] = True
        return adj

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency()[i])

    def n_components(self) -> int:
        e = self.edge_array
        m = csr_matrix(
            (np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n_nodes, self.n_nodes)
        )
        return connected_components(m, directed=False)[0]

    def is_connected(self) -> bool:
        return self.n_components() == 1


# --------------------------------------------------------------------------
# schemes


class GossipScheme(abc.ABC):
    """Distribution of the gossip matrix W_n at step n."""

    @property
    @abc.abstractmethod
    def n_nodes(self) -> int: ...

    @property
    def base(self) -> GossipScheme:
        """Innermost scheme whose activations index the matrices."""
        return self

    @abc.abstractmethod
    def draw(self, rng: np.random.Generator, steps: np.ndarray) -> np.ndarray:
        """One activation per entry of ``steps``; -1 means W_n = I."""

    @abc.abstractmethod
    def activation_law(self, step: int) -> tuple[np.ndarray, float]:
        """Probabilities of base activations at ``step`` and the identity mass."""

    def matrix(self, activation: int) -> np.ndarray:
        return self.base._matrix(activation)

    def apply(self, theta: np.ndarray, activations: np.ndarray) -> np.ndarray:
        """Apply ``W (x) I_d`` in place to a batch ``theta`` of shape (R, N, d)."""
        return self.base._apply(theta, activations)

    def support(self, step: int = 1) -> list[tuple[float, np.ndarray]]:
        """Exact finite support of W_step as (probability, matrix) pairs."""
        probs, p_identity = self.activation_law(step)
        out = [(float(p), self.matrix(a)) for a, p in enumerate(probs) if p > 0]
        if p_identity > 0:
            out.append((float(p_identity), np.eye(self.n_nodes)))
        return out

    # overridden by base schemes
    def _matrix(self, activation: int) -> np.ndarray:
        raise NotImplementedError

    def _apply(self, theta, activations):
        raise NotImplementedError


def _activation_probabilities(weights, k: int) -> np.ndarray:
    if weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or w.sum() <= 0:
        raise ConfigurationError(f"activation weights must be {k} non-negative numbers")
    return w / w.sum()


def _draw_base(rng, steps, k, probs, uniform):
    if uniform:
        return rng.integers(0, k, size=len(steps))
    return rng.choice(k, size=len(steps), p=probs)


@dataclass(frozen=True, eq=False)
class Identity(GossipScheme):
    """No communication: W_n = I_N."""

    nodes: int

    @property
    def n_nodes(self) -> int:
        return self.nodes

    def draw(self, rng, steps):
        return np.full(len(steps), -1, dtype=np.intp)

    def activation_law(self, step):
        _check_step(step)
        return np.zeros(0), 1.0

    def _matrix(self, activation):
        return np.eye(self.nodes)

    def _apply(self, theta, activations):
        return theta


@dataclass(frozen=True, eq=False)
class Pairwise(GossipScheme):
    """A random edge {i, j} wakes up and both endpoints average."""

    graph: NetworkGraph
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.graph.n_edges == 0:
            raise ConfigurationError("pairwise gossip needs at least one edge")
        object.__setattr__(self, "_edges", self.graph.edge_array)
        object.__setattr__(
            self, "_probs", _activation_probabilities(self.weights, self.graph.n_edges)
        )

    @property
    def n_nodes(self):
        return self.graph.n_nodes

    def draw(self, rng, steps):
        return _draw_base(rng, steps, self.graph.n_edges, self._probs, self.weights is None)

    def activation_law(self, step):
        _check_step(step)
        return self._probs, 0.0

    def _matrix(self, activation):
        w = np.eye(self.n_nodes)
        if activation < 0:
            return w
        i, j = self._edges[activation]
        w[i, i] = w[j, j] = w[i, j] = w[j, i] = 0.5
        return w

    def _apply(self, theta, activations):
        live = np.flatnonzero(activations >= 0)
        if live.size == 0:
            return theta
        e = self._edges[activations[live]]
        i, j = e[:, 0], e[:, 1]
        avg = 0.5 * (theta[live, i] + theta[live, j])
        theta[live, i] = avg
        theta[live, j] = avg
        return theta


@dataclass(frozen=True, eq=False)
class Broadcast(GossipScheme):
    """A random node broadcasts; each neighbour moves a fraction ``beta`` towards it."""

    graph: NetworkGraph
    beta: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ConfigurationError(f"broadcast beta must lie in (0, 1), got {self.beta}")
        object.__setattr__(self, "_adj", self.graph.adjacency())
        object.__setattr__(
            self, "_probs", _activation_probabilities(self.weights, self.graph.n_nodes)
        )

    @property
    def n_nodes(self):
        return self.graph.n_nodes

    def draw(self, rng, steps):
        return _draw_base(rng, steps, self.graph.n_nodes, self._probs, self.weights is None)

    def activation_law(self, step):
        _check_step(step)
        return self._probs, 0.0

    def _matrix(self, activation):
        w = np.eye(self.n_nodes)
        if activation < 0:
            return w
        nbrs = np.flatnonzero(self._adj[activation])
        w[nbrs, nbrs] = 1.0 - self.beta
        w[nbrs, activation] = self.beta
        return w

    def _apply(self, theta, activations):
        live = np.flatnonzero(activations >= 0)
        if live.size == 0:
            return theta
        src = activations[live]
        mask = self._adj[src][..., None]
        block = theta[live]
        sender = theta[live, src][:, None, :]
        theta[live] = np.where(mask, self.beta * sender + (1.0 - self.beta) * block, block)
        return theta


@dataclass(frozen=True, eq=False)
class Dropout(GossipScheme):
    """With probability ``p`` gossip through ``inner``, otherwise skip (W = I)."""

    inner: GossipScheme
    p: float

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigurationError(f"dropout probability must lie in (0, 1], got {self.p}")

    @property
    def n_nodes(self):
        return self.inner.n_nodes

    @property
    def base(self):
        return self.inner.base

    def mixing_probability(self, steps):
        return np.full(np.shape(steps), self.p)

    def draw(self, rng, steps):
        steps = np.asarray(steps)
        act = self.inner.draw(rng, steps)
        keep = rng.random(len(steps)) < self.mixing_probability(steps)
        return np.where(keep, act, -1)

    def activation_law(self, step):
        probs, p_id = self.inner.activation_law(step)
        p = float(self.mixing_probability(np.array([step]))[0])
        return p * probs, p * p_id + (1.0 - p)


@dataclass(frozen=True, eq=False)
class VanishingRate(Dropout):
    """Dropout whose communication probability decays as min(1, p0 / n**eta)."""

    inner: GossipScheme
    p0: float = 1.0
    eta: float = 0.0
    p: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.p0 <= 0:
            raise ConfigurationError("vanishing-rate p0 must be positive")
        if self.eta < 0:
            raise ConfigurationError("vanishing-rate eta must be non-negative")

    def mixing_probability(self, steps):
        steps = np.asarray(steps, dtype=float)
        return np.minimum(1.0, self.p0 / steps**self.eta)


def _check_step(step):
    if int(step) < 1:
        raise ValueError(f"gossip steps are numbered from 1, got {step}")


# --------------------------------------------------------------------------
# operations


def sample_gossip(scheme: GossipScheme, step: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one realization of W_step."""
    _check_step(step)
    act = scheme.draw(rng, np.array([step]))[0]
    return scheme.matrix(int(act))


def expected_matrix(scheme: GossipScheme, step: int = 1) -> np.ndarray:
    """E(W_step) by enumerating the activation distribution."""
    _check_step(step)
    out = np.zeros((scheme.n_nodes, scheme.n_nodes))
    for p, w in scheme.support(step):
        out += p * w
    return out


def disagreement_projector(n: int) -> np.ndarray:
    """K = I_N - 11^T / N."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def contraction_coefficient(scheme: GossipScheme, step: int = 1) -> float:
    """Spectral norm of E(W^T K W), computed exactly over the support."""
    _check_step(step)
    k = disagreement_projector(scheme.n_nodes)
    m = np.zeros_like(k)
    for p, w in scheme.support(step):
        m += p * (w.T @ k @ w)
    m = 0.5 * (m + m.T)
    rho = float(np.linalg.eigvalsh(m)[-1])
    return min(max(rho, 0.0), 1.0)


@dataclass
class SchemeReport:
    row_stochastic: bool
    nonnegative: bool
    column_stochastic_in_mean: bool
    doubly_stochastic: bool
    rho: float
    max_row_error: float
    max_column_error: float

    @property
    def assumption1_ok(self) -> bool:
        """Row stochastic, column stochastic in mean, and rho < 1."""
        return (
            self.row_stochastic
            and self.nonnegative
            and self.column_stochastic_in_mean
            and self.rho < 1.0 - STOCHASTIC_TOL
        )


def validate_scheme(scheme: GossipScheme, tolerance: float = STOCHASTIC_TOL, step: int = 1) -> SchemeReport:
    support = scheme.support(step)
    row_err = max(np.abs(w.sum(axis=1) - 1.0).max() for _, w in support)
    col_err_each = max(np.abs(w.sum(axis=0) - 1.0).max() for _, w in support)
    nonneg = all((w >= 0).all() and (w <= 1).all() for _, w in support)
    col_err = float(np.abs(expected_matrix(scheme, step).sum(axis=0) - 1.0).max())
    return SchemeReport(
        row_stochastic=bool(row_err <= tolerance),
        nonnegative=bool(nonneg),
        column_stochastic_in_mean=bool(col_err <= tolerance),
        doubly_stochastic=bool(row_err <= tolerance and col_err_each <= tolerance),
        rho=contraction_coefficient(scheme, step),
        max_row_error=float(row_err),
        max_column_error=col_err,
    )


@dataclass
class FeasibilityReport:
    feasible: bool
    eta: float
    xi: float
    alpha: float
    conditions: dict[str, str]


def vanishing_rate_feasibility(eta: float, xi: float, alpha: float) -> FeasibilityReport:
    """Check 0 <= eta < xi - 1/2 <= 1/2 for 1 - rho_n ~ a/n^eta, gamma_n ~ g0/n^xi.

    The three limits are reported as the exponent comparisons they reduce
    to for power-law sequences.
    """
    if alpha <= 0.5:
        raise ValueError(f"alpha must exceed 1/2, got {alpha}")
    if eta < 0 or xi <= 0:
        raise ValueError("need eta >= 0 and xi > 0")

    def verdict(ok):
        return "holds" if ok else "fails"

    conditions = {
        "n^alpha gamma_n -> 0": f"{verdict(alpha < xi)} (alpha - xi = {alpha - xi:+.3g})",
        "n^(1+alpha) gamma_n -> inf": f"{verdict(1 + alpha > xi)} (1 + alpha - xi = {1 + alpha - xi:+.3g})",
        "liminf (1-rho_n)/(n^alpha gamma_n) > 0": f"{verdict(xi - alpha >= eta)} (xi - alpha - eta = {xi - alpha - eta:+.3g})",
    }
    feasible = 0.0 <= eta < xi - 0.5 <= 0.5
    return FeasibilityReport(bool(feasible), eta, xi, alpha, conditions)
