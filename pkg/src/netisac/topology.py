"""Sensing-user graphs and Metropolis combination weights."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

MAX_RESAMPLES = 10_000


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected user graph. ``adjacency`` carries explicit self-loops."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigError("adjacency must be square")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        np.fill_diagonal(adj, True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def n_users(self):
        return self.adjacency.shape[0]

    @property
    def degree(self):
        """Links per user, self excluded."""
        return self.adjacency.sum(axis=0) - 1

    def neighbors(self, k, include_self=True):
        idx = np.flatnonzero(self.adjacency[:, k])
        if include_self:
            return idx
        return idx[idx != k]

    def is_connected(self):
        # frontier search on the dense matrix; scipy's csgraph input checks
        # cost more than the search itself at these sizes
        adj = self.adjacency
        seen = adj[0].copy()
        frontier = seen
        while frontier.any():
            reach = adj[frontier].any(axis=0)
            frontier = reach & ~seen
            seen |= reach
        return bool(seen.all())

    def edges(self):
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [[int(a), int(b)] for a, b in zip(rows, cols)]

    def to_dict(self):
        return {"n_users": self.n_users, "edges": self.edges()}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        n = int(data["n_users"])
        adj = np.eye(n, dtype=bool)
        for l, k in data.get("edges", []):
            if not (0 <= l < n and 0 <= k < n):
                raise ConfigError(f"edge ({l}, {k}) out of range for {n} users")
            adj[l, k] = adj[k, l] = True
        return cls(adj)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def build_random_network(n_users, avg_degree, seed):
    """Connected Erdos-Renyi graph with mean degree near ``avg_degree``.

    Edges appear independently with probability ``avg_degree / (n_users - 1)``;
    draws are rejected until the graph is connected and its mean degree lies
    within one of the request.
    """
    if n_users < 2:
        raise ConfigError("n_users must be at least 2")
    if not 1 <= avg_degree < n_users:
        raise ConfigError(f"avg_degree must lie in [1, {n_users}), got {avg_degree}")
    p = min(1.0, avg_degree / (n_users - 1))
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_users, k=1)
    for _ in range(MAX_RESAMPLES):
        adj = np.zeros((n_users, n_users), dtype=bool)
        adj[iu] = rng.random(iu[0].size) < p
        adj |= adj.T
        # cheap degree test first; the connectivity check dominates otherwise
        if abs(adj.sum() / n_users - avg_degree) > 1:
            continue
        graph = NetworkGraph(adj)
        if graph.is_connected():
            return graph
    raise ConfigError(
        f"no connected graph with mean degree {avg_degree}±1 on {n_users} users "
        f"after {MAX_RESAMPLES} draws"
    )


def metropolis_weights(graph):
    """Combination matrix with ``c_lk = 1/max(n_k, n_l)`` off the diagonal.

    Each diagonal entry takes whatever is left so that every column sums to
    one; the result is symmetric and therefore doubly stochastic.
    """
    deg = graph.degree.astype(float)
    adj = graph.adjacency.copy()
    np.fill_diagonal(adj, False)
    with np.errstate(divide="ignore"):
        C = np.where(adj, 1.0 / np.maximum.outer(deg, deg), 0.0)
    C[np.diag_indices_from(C)] = 1.0 - C.sum(axis=0)
    # kill round-off so an exactly-zero remainder stays zero
    diag = np.diag(C).copy()
    diag[np.abs(diag) < 1e-15] = 0.0
    C[np.diag_indices_from(C)] = diag
    return C


@dataclass
class ValidationReport:
    passed: bool
    max_column_deviation: float
    max_row_deviation: float
    negative_entries: list = field(default_factory=list)
    support_violations: list = field(default_factory=list)
    out_of_range_entries: list = field(default_factory=list)

    def __bool__(self):
        return self.passed

    def summary(self):
        lines = [
            f"passed={self.passed}",
            f"max |1^T C - 1^T| = {self.max_column_deviation:.3e}",
            f"max |C 1 - 1| = {self.max_row_deviation:.3e} (informational)",
        ]
        for name in ("negative_entries", "support_violations", "out_of_range_entries"):
            items = getattr(self, name)
            if items:
                lines.append(f"{name}: {items[:10]}{' ...' if len(items) > 10 else ''}")
        return "\n".join(lines)


def validate_combination(C, graph, tol=1e-12):
    """Check column-stochasticity, nonnegativity and support of ``C``.

    Row sums are reported but never fail the check.
    """
    C = np.asarray(C, dtype=float)
    if C.shape != graph.adjacency.shape:
        raise ConfigError(f"C has shape {C.shape}, graph has {graph.n_users} users")
    col_dev = float(np.max(np.abs(C.sum(axis=0) - 1.0)))
    row_dev = float(np.max(np.abs(C.sum(axis=1) - 1.0)))
    negative = [(int(l), int(k), float(C[l, k])) for l, k in zip(*np.nonzero(C < -tol))]
    above = [(int(l), int(k), float(C[l, k])) for l, k in zip(*np.nonzero(C > 1 + tol))]
    off_support = (~graph.adjacency) & (np.abs(C) > tol)
    support = [(int(l), int(k), float(C[l, k])) for l, k in zip(*np.nonzero(off_support))]
    passed = col_dev <= tol and not negative and not support and not above
    return ValidationReport(passed, col_dev, row_dev, negative, support, above)
