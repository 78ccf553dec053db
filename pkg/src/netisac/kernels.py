"""Hot loops of the sparse TLS recursions.

Each recursion has an ``@njit`` kernel and a numpy twin that vectorises over
users; :func:`atc_recursion` / :func:`pooled_recursion` dispatch on the
backend chosen in :mod:`netisac._accel`.  Both return the full state history
plus ``(bad_iter, bad_user)`` (``-1`` when every state stayed finite).
"""

import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------- numba path

@njit(cache=True)
def _adapt_nb(x, y, u, mu, eta1, eta2, K1, out):
    K = x.shape[0]
    inner = 0j
    nrm2 = 0.0
    for k in range(K):
        inner += np.conj(u[k]) * x[k]
        nrm2 += x[k].real * x[k].real + x[k].imag * x[k].imag
    eps = (y - inner) / (nrm2 + 1.0)
    eps_c = np.conj(eps)
    for b0 in range(0, K, K1):
        bn = 0.0
        for k in range(b0, b0 + K1):
            bn += x[k].real * x[k].real + x[k].imag * x[k].imag
        bn = np.sqrt(bn)
        for k in range(b0, b0 + K1):
            xk = x[k]
            step = eps * (u[k] + eps_c * xk)
            ak = abs(xk)
            if ak > 0.0:
                step -= eta1 * xk / ak
            if bn > 0.0:
                step -= eta2 * xk / bn
            out[k] = xk + mu * step


@njit(cache=True)
def _atc_nb(Y, U, C, mu, eta1, eta2, K1, X0):
    N, T = Y.shape
    K = X0.shape[1]
    hist = np.empty((T + 1, N, K), dtype=np.complex128)
    hist[0] = X0
    phi = np.empty((N, K), dtype=np.complex128)
    for i in range(T):
        x_prev = hist[i]
        for n in range(N):
            _adapt_nb(x_prev[n], Y[n, i], U[n, i], mu[n], eta1, eta2, K1, phi[n])
        # blame the user whose own update broke, before combining spreads it
        for n in range(N):
            for k in range(K):
                v = phi[n, k]
                if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                    hist[i + 1] = phi
                    return hist, i + 1, n
        x_new = hist[i + 1]
        for n in range(N):
            for k in range(K):
                acc = 0j
                for l in range(N):
                    c = C[l, n]
                    if c != 0.0:
                        acc += c * phi[l, k]
                x_new[n, k] = acc
        for n in range(N):
            for k in range(K):
                v = x_new[n, k]
                if not (np.isfinite(v.real) and np.isfinite(v.imag)):
                    return hist, i + 1, n
    return hist, -1, -1


@njit(cache=True)
def _pooled_nb(Y, U, mu, eta1, eta2, K1, x0):
    N, T = Y.shape
    K = x0.shape[0]
    hist = np.empty((T + 1, K), dtype=np.complex128)
    hist[0] = x0
    x = x0.copy()
    tmp = np.empty(K, dtype=np.complex128)
    for i in range(T):
        for n in range(N):
            _adapt_nb(x, Y[n, i], U[n, i], mu, eta1, eta2, K1, tmp)
            x[:] = tmp
            for k in range(K):
                if not (np.isfinite(x[k].real) and np.isfinite(x[k].imag)):
                    hist[i + 1] = x
                    return hist, i + 1, n
        hist[i + 1] = x
    return hist, -1, -1


# ---------------------------------------------------------------- numpy path

def _adapt_np(X, y, U, mu, eta1, eta2, K1):
    """Vectorised adaptation over the leading (user) axis."""
    N, K = X.shape
    inner = np.einsum("nk,nk->n", U.conj(), X)
    nrm2 = np.einsum("nk,nk->n", X.conj(), X).real
    with np.errstate(invalid="ignore", over="ignore"):   # non-finite results are reported by the caller
        eps = (y - inner) / (nrm2 + 1.0)
    step = eps[:, None] * (U + eps.conj()[:, None] * X)
    if eta1:
        mag = np.abs(X)
        step -= eta1 * np.divide(X, mag, out=np.zeros_like(X), where=mag > 0)
    if eta2:
        Xb = X.reshape(N, K // K1, K1)
        bn = np.linalg.norm(Xb, axis=2, keepdims=True)
        shrink = np.divide(Xb, bn, out=np.zeros_like(Xb), where=bn > 0)
        step -= eta2 * shrink.reshape(N, K)
    return X + mu[:, None] * step


def _atc_np(Y, U, C, mu, eta1, eta2, K1, X0):
    N, T = Y.shape
    hist = np.empty((T + 1,) + X0.shape, dtype=complex)
    hist[0] = X0
    Ct = np.ascontiguousarray(C.T)
    for i in range(T):
        phi = _adapt_np(hist[i], Y[:, i], U[:, i], mu, eta1, eta2, K1)
        bad = ~np.isfinite(phi).all(axis=1)
        if bad.any():
            hist[i + 1] = phi
            return hist, i + 1, int(np.argmax(bad))
        hist[i + 1] = Ct @ phi
        bad = ~np.isfinite(hist[i + 1]).all(axis=1)
        if bad.any():
            return hist, i + 1, int(np.argmax(bad))
    return hist, -1, -1


def _pooled_np(Y, U, mu, eta1, eta2, K1, x0):
    N, T = Y.shape
    hist = np.empty((T + 1, x0.size), dtype=complex)
    hist[0] = x0
    x = x0[None, :].copy()
    mu_arr = np.array([mu])
    for i in range(T):
        for n in range(N):
            x = _adapt_np(x, Y[n, i:i + 1], U[n, i][None, :], mu_arr, eta1, eta2, K1)
            if not np.isfinite(x).all():
                hist[i + 1] = x[0]
                return hist, i + 1, n
        hist[i + 1] = x[0]
    return hist, -1, -1


# ---------------------------------------------------------------- dispatch

def _prep(Y, U):
    Y = np.ascontiguousarray(Y, dtype=np.complex128)
    U = np.ascontiguousarray(U, dtype=np.complex128)
    if Y.ndim != 2 or U.shape[:2] != Y.shape:
        raise ValueError(f"Y{Y.shape} and U{U.shape} disagree")
    return Y, U


def atc_recursion(Y, U, C, mu, eta1, eta2, K1, X0, backend=None):
    """Run the adapt-then-combine recursion; returns ``(hist, bad_iter, bad_user)``."""
    Y, U = _prep(Y, U)
    C = np.ascontiguousarray(C, dtype=np.float64)
    mu = np.ascontiguousarray(np.broadcast_to(mu, (Y.shape[0],)), dtype=np.float64)
    X0 = np.ascontiguousarray(X0, dtype=np.complex128)
    backend = backend or _accel.active_backend()
    fn = _atc_nb if backend == "numba" and _accel.HAS_NUMBA else _atc_np
    hist, bi, bu = fn(Y, U, C, mu, float(eta1), float(eta2), int(K1), X0)
    return hist, int(bi), int(bu)


def pooled_recursion(Y, U, mu, eta1, eta2, K1, x0, backend=None):
    """Single-state recursion over the round-robin pooled stream."""
    Y, U = _prep(Y, U)
    x0 = np.ascontiguousarray(x0, dtype=np.complex128)
    backend = backend or _accel.active_backend()
    fn = _pooled_nb if backend == "numba" and _accel.HAS_NUMBA else _pooled_np
    hist, bi, bu = fn(Y, U, float(mu), float(eta1), float(eta2), int(K1), x0)
    return hist, int(bi), int(bu)
