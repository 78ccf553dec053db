"""Sparse total-least-squares estimators: centralized and diffusion (ATC) forms."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, DivergenceError
from .scene import RoiGrid


@dataclass(frozen=True)
class EstimatorParams:
    """Step sizes ``mu`` (scalar or per user) and the l1 / l2,1 weights."""

    mu: object
    eta1: float = 0.0
    eta2: float = 0.0

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if np.any(mu < 0):
            raise ConfigError("step sizes must be nonnegative")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigError("regularization weights must be nonnegative")
        object.__setattr__(self, "mu", mu)

    def mu_for(self, N):
        if self.mu.size == 1:
            return np.full(N, self.mu[0])
        if self.mu.size != N:
            raise ConfigError(f"{self.mu.size} step sizes for {N} users")
        return self.mu

    def with_penalties(self, eta1, eta2):
        return EstimatorParams(self.mu, eta1, eta2)


def _block_len(grid_or_len, K):
    if grid_or_len is None:
        return K
    if isinstance(grid_or_len, RoiGrid):
        return grid_or_len.block_len
    return int(grid_or_len)


def weighted_error(y, u, x):
    """``(y - u^H x) / (||x||^2 + 1)``."""
    x = np.asarray(x)
    return (y - np.vdot(u, x)) / (np.vdot(x, x).real + 1.0)


def instantaneous_gradient(y, u, x):
    """Gradient of ``|y - u^H x|^2 / (||x||^2 + 1)`` as ``dJ/dRe(x) + j dJ/dIm(x)``.

    Equals ``-2 eps (u + conj(eps) x)``; on real data this is ``-2 eps (u + eps x)``.
    """
    u = np.asarray(u, dtype=complex)
    x = np.asarray(x, dtype=complex)
    eps = weighted_error(y, u, x)
    return -2.0 * eps * (u + np.conj(eps) * x)


def sign_vec(x):
    x = np.asarray(x, dtype=complex)
    mag = np.abs(x)
    return np.divide(x, mag, out=np.zeros_like(x), where=mag > 0)


def block_shrink_direction(x, grid):
    """Each block divided by its l2 norm; zero blocks stay zero."""
    x = np.asarray(x, dtype=complex)
    K1 = _block_len(grid, x.size)
    xb = x.reshape(-1, K1)
    bn = np.linalg.norm(xb, axis=1, keepdims=True)
    return np.divide(xb, bn, out=np.zeros_like(xb), where=bn > 0).ravel()


@dataclass
class NodeState:
    x_est: np.ndarray
    phi: np.ndarray = None


def adapt(state, y, u, mu, params, grid=None):
    """Adaptation step, returning the intermediate estimate ``phi``.

    ``state`` may be a :class:`NodeState` or a bare estimate vector.
    """
    x = state.x_est if isinstance(state, NodeState) else np.asarray(state, dtype=complex)
    eps = weighted_error(y, u, x)
    step = eps * (np.asarray(u) + np.conj(eps) * x)
    if params.eta1:
        step = step - params.eta1 * sign_vec(x)
    if params.eta2:
        step = step - params.eta2 * block_shrink_direction(x, _block_len(grid, x.size))
    phi = x + mu * step
    if isinstance(state, NodeState):
        state.phi = phi
    return phi


def combine(phis, C, n):
    """Convex combination of neighbours' intermediate estimates for user ``n``."""
    phis = np.asarray(phis)
    col = np.asarray(C)[:, n]
    nz = np.flatnonzero(col)
    return col[nz] @ phis[nz]


@dataclass
class Trajectory:
    """Estimates over time; ``estimates[i]`` is the state after ``i`` iterations.

    Shape is ``(T+1, N, K)`` for the diffusion run and ``(T+1, 1, K)`` for the
    centralized one.
    """

    estimates: np.ndarray

    @property
    def T(self):
        return self.estimates.shape[0] - 1

    @property
    def final(self):
        return self.estimates[-1]

    @property
    def n_nodes(self):
        return self.estimates.shape[1]

    def squared_deviation(self, x0):
        """``||x0 - x_{k,i}||^2`` with shape (T+1, nodes)."""
        d = self.estimates - np.asarray(x0)[None, None, :]
        return np.einsum("tnk,tnk->tn", d.conj(), d).real

    def to_csv(self, path, x0, floor_db=-300.0):
        sd = self.squared_deviation(x0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "user", "msd_db"])
            for (i, n), v in np.ndenumerate(sd):
                db = 10 * np.log10(v) if v > 0 else floor_db
                w.writerow([i, n, f"{max(db, floor_db):.12g}"])

    def final_to_json(self):
        fin = self.final
        return json.dumps({"re": fin.real.tolist(), "im": fin.imag.tolist()})


def run_distributed(Y, U, C, params, x_init=None, grid=None, backend=None):
    """Diffusion sparse TLS: adapt, exchange, combine at each iteration.

    ``Y`` is (N, T) and ``U`` is (N, T, K); row ``U[n, i]`` is the regressor
    user ``n`` sees at slot ``i``.
    """
    Y = np.asarray(Y)
    U = np.asarray(U)
    N, T = Y.shape
    K = U.shape[2]
    C = np.asarray(C, dtype=float)
    if C.shape != (N, N):
        raise ConfigError(f"C has shape {C.shape}, expected ({N}, {N})")
    X0 = np.zeros((N, K), dtype=complex) if x_init is None else np.broadcast_to(
        np.asarray(x_init, dtype=complex), (N, K))
    hist, bad_i, bad_n = kernels.atc_recursion(
        Y, U, C, params.mu_for(N), params.eta1, params.eta2, _block_len(grid, K), X0,
        backend=backend)
    if bad_i >= 0:
        raise DivergenceError(bad_i, bad_n)
    return Trajectory(hist)


def pool_round_robin(Y, U):
    """Interleave user streams: slot 0 of users 0..N-1, then slot 1, ..."""
    Y = np.asarray(Y)
    U = np.asarray(U)
    return Y.T.reshape(-1), U.transpose(1, 0, 2).reshape(-1, U.shape[2])


def run_centralized(Y, U, params, x_init=None, grid=None, backend=None):
    """Leader-node recursion over the round-robin pooled stream.

    One iteration consumes the N samples of one time slot, so the returned
    trajectory has the same time axis as :func:`run_distributed`.
    """
    Y = np.asarray(Y)
    U = np.asarray(U)
    N, T = Y.shape
    K = U.shape[2]
    if params.mu.size != 1 and not np.allclose(params.mu, params.mu[0]):
        raise ConfigError("centralized recursion needs a single step size")
    x0 = np.zeros(K, dtype=complex) if x_init is None else np.asarray(x_init, dtype=complex)
    hist, bad_i, bad_n = kernels.pooled_recursion(
        Y, U, params.mu[0], params.eta1, params.eta2, _block_len(grid, K), x0, backend=backend)
    if bad_i >= 0:
        raise DivergenceError(bad_i, bad_n)
    return Trajectory(hist[:, None, :])
