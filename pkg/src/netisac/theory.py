"""Closed-form steady-state MSE of the diffusion sparse TLS network.

Conventions
-----------
``vec`` stacks columns (Fortran order), so ``(A kron B) vec(X) = vec(B X A^T)``.
With that orientation the second-moment recursion ``Y -> A Y A^H`` is
``vec(Y) -> (conj(A) kron A) vec(Y)``; ``P`` and ``V`` are built that way.
For real ``C`` and real step sizes ``V`` is unaffected, and ``P`` only
differs from ``A kron A`` through the complex Hessian.

``rvec(X)`` is ``vec(X)^H``.

The per-user regressor is ``u_l = conj(s_e) diag(conj(h_l)) G^H w``, so
``R_l = |s_e|^2 diag(conj(h_l)) G^H w w^H G diag(h_l)``.  It has rank one;
whenever ``N < K`` some directions are seen by no user, ``I - DH`` keeps an
eigenvalue at 1 on them and ``I - P`` is singular.  :func:`steady_state_mse`
can then restrict the prediction to the identifiable subspace
``range(sum_l R_l)`` (``restrict=True``), where the linearised error
recursion decouples from the blind directions.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import ConfigError, SizeError, StabilityError

DENSE_KN_CAP = 64
TIKHONOV_DEFAULT = 1e-6


def vec(X):
    return np.asarray(X).reshape(-1, order="F")


def unvec(v, n):
    return np.asarray(v).reshape(n, n, order="F")


def _channels(scene_or_channels):
    return getattr(scene_or_channels, "channels", scene_or_channels)


# ------------------------------------------------------------------ pieces

def covariance_R(scene, w, s_e_power=1.0):
    """Per-user regressor covariances, shape (N, K, K)."""
    ch = _channels(scene)
    a = np.conj(ch.h) * (ch.G.conj().T @ np.asarray(w, dtype=complex))[None, :]
    return s_e_power * np.einsum("nk,nj->nkj", a, a.conj())


def channel_aggregate(scene):
    """``U = blkdiag(diag(conj(h_l))) (I_N kron G^H)``, shape (KN, MN)."""
    ch = _channels(scene)
    N = ch.N
    Gh = ch.G.conj().T
    return sla.block_diag(*[np.conj(ch.h[l])[:, None] * Gh for l in range(N)])


def hessian_blocks(scene, w, x0, s_e_power=1.0):
    """Block-diagonal ``H`` with blocks ``2 R_l / (||x0||^2 + 1)``."""
    R = covariance_R(scene, w, s_e_power)
    s = np.vdot(x0, x0).real + 1.0
    return sla.block_diag(*(2.0 * R / s))


def step_matrix(mu, N, K):
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (N,))
    if np.any(mu < 0):
        raise ConfigError("step sizes must be nonnegative")
    return np.diag(np.repeat(mu, K))


def combination_operator(C, K):
    """``O = C^H kron I_K``."""
    return np.kron(np.asarray(C).conj().T, np.eye(K))


def gradient_error_cov(scene, w, x0, sigma_in2, s_e_power=1.0):
    """Gradient-noise covariance ``Q`` (KN x KN) and ``q = vec(Q)``.

    Block ``l`` is ``alpha1 (R_l + s2 I - 3 s2 x0 x0^H / (||x0||^2+1))``
    with ``alpha1 = 4 s2 / (||x0||^2+1)``.
    """
    x0 = np.asarray(x0, dtype=complex)
    R = covariance_R(scene, w, s_e_power)
    K = x0.size
    s = np.vdot(x0, x0).real + 1.0
    a1 = 4.0 * sigma_in2 / s
    base = sigma_in2 * np.eye(K) - 3.0 * sigma_in2 * np.outer(x0, x0.conj()) / s
    Q = sla.block_diag(*[a1 * (R_l + base) for R_l in R])
    return Q, vec(Q)


def gradient_error_cov_factored(scene, w, x0, sigma_in2, s_e_power=1.0):
    """Same ``q`` via ``alpha1 |s_e|^2 (conj(U) kron U) vec(I_N kron w w^H) + vec(B)``.

    ``B = alpha1 I_N kron (s2 I - 3 s2 x0 x0^H/(||x0||^2+1))``.
    """
    ch = _channels(scene)
    x0 = np.asarray(x0, dtype=complex)
    w = np.asarray(w, dtype=complex)
    s = np.vdot(x0, x0).real + 1.0
    a1 = 4.0 * sigma_in2 / s
    U = channel_aggregate(ch)
    Wbig = np.kron(np.eye(ch.N), np.outer(w, w.conj()))
    B = a1 * np.kron(np.eye(ch.N), sigma_in2 * np.eye(x0.size)
                     - 3.0 * sigma_in2 * np.outer(x0, x0.conj()) / s)
    return a1 * s_e_power * (np.kron(U.conj(), U) @ vec(Wbig)) + vec(B)


def interference_variance(scene, f, s_d_power=1.0):
    """Mean per-entry power of ``e_{n,i} = s_d f^H G diag(h_n)``."""
    ch = _channels(scene)
    row = np.conj(f) @ ch.G
    return float(s_d_power * np.mean(np.abs(row[None, :] * ch.h) ** 2))


# ------------------------------------------------------------------ P and V

class KronOperator:
    """``vec(Y) -> vec(L Y R^H)``, i.e. ``conj(R) kron L`` without forming it."""

    def __init__(self, left, right=None):
        self.left = np.asarray(left)
        self.right = self.left if right is None else np.asarray(right)
        n = self.left.shape[0]
        self.shape = (n * n, n * n)

    def apply(self, Y):
        return self.left @ Y @ self.right.conj().T

    def matvec(self, y):
        n = self.left.shape[0]
        return vec(self.apply(unvec(y, n)))

    def __matmul__(self, y):
        return self.matvec(y)

    def dense(self):
        return np.kron(self.right.conj(), self.left)


def assemble_P_V(H, D, C, mode="dense"):
    """``P = conj(A) kron A`` with ``A = (I - DH) O^H`` and ``V = conj(DO^H) kron DO^H``.

    ``mode="matrix-free"`` returns :class:`KronOperator` handles.
    """
    H = np.asarray(H)
    D = np.asarray(D)
    KN = H.shape[0]
    N = np.asarray(C).shape[0]
    O = combination_operator(C, KN // N)
    A = (np.eye(KN) - D @ H) @ O.conj().T
    DOh = D @ O.conj().T
    if mode == "dense":
        if KN > DENSE_KN_CAP:
            raise SizeError(f"dense P needs KN <= {DENSE_KN_CAP}, got {KN}")
        return np.kron(A.conj(), A), np.kron(DOh.conj(), DOh)
    if mode in ("matrix-free", "matrix_free"):
        return KronOperator(A), KronOperator(DOh)
    raise ConfigError(f"unknown mode {mode!r}")


def P_factored(scene, w, x0, mu, C, s_e_power=1.0):
    """``P`` expanded in ``U``, ``D``, ``O`` (four Kronecker terms)."""
    ch = _channels(scene)
    K, N = ch.K, ch.N
    x0 = np.asarray(x0, dtype=complex)
    a2 = 2.0 / (np.vdot(x0, x0).real + 1.0)
    U = channel_aggregate(ch)
    S = U @ np.kron(np.eye(N), np.outer(w, np.conj(w))) @ U.conj().T
    D = step_matrix(mu, N, K)
    Oh = combination_operator(C, K).conj().T
    I = np.eye(K * N)
    Hb = a2 * s_e_power * S
    return (np.kron(Oh.conj(), Oh)
            - np.kron(Hb.conj(), I) @ np.kron((D @ Oh).conj(), Oh)
            - np.kron(I, Hb) @ np.kron(Oh.conj(), D @ Oh)
            + np.kron(Hb.conj(), Hb) @ np.kron(D, D) @ np.kron(Oh.conj(), Oh))


# ---------------------------------------------------------------- stability

@dataclass
class StabilityReport:
    spectral_radius_DH: float
    spectral_radius_I_minus_DH: float
    spectral_radius_A: float
    spectral_radius_A_identifiable: float
    identifiable_dim: int
    passed: bool
    identifiable_passed: bool

    @property
    def strict_passed(self):
        """``rho(I - DH) < 1``: holds only when every direction is observed."""
        return self.spectral_radius_I_minus_DH < 1.0 - 1e-12


def _radius(M):
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def identifiable_projector(H, N, tol=1e-10):
    """Projector onto ``range(sum_l H_l)`` (K x K) and its rank."""
    KN = H.shape[0]
    K = KN // N
    S = sum(H[l * K:(l + 1) * K, l * K:(l + 1) * K] for l in range(N))
    vals, vecs = np.linalg.eigh((S + S.conj().T) / 2)
    keep = vals > tol * max(vals.max(initial=0.0), 1e-300)
    E = vecs[:, keep]
    return E @ E.conj().T, int(keep.sum())


def stability_check(H, D, O):
    """Spectral radii of ``DH``, ``I - DH`` and ``A = (I-DH)O^H``.

    ``passed`` requires ``rho(DH) < 2`` and ``rho(A) < 1``;
    ``identifiable_passed`` requires the same of ``A`` restricted to the
    identifiable subspace.  The radius of ``I - DH`` is reported as well.
    """
    H = np.asarray(H)
    D = np.asarray(D)
    O = np.asarray(O)
    KN = H.shape[0]
    DH = D @ H
    A = (np.eye(KN) - DH) @ O.conj().T
    N = _n_users_from_O(O, KN)
    Pi, rank = identifiable_projector(H, N)
    A_id = A @ np.kron(np.eye(N), Pi)
    r_dh = _radius(DH)
    r_a = _radius(A)
    r_id = _radius(A_id)
    return StabilityReport(
        r_dh, _radius(np.eye(KN) - DH), r_a, r_id, rank,
        passed=bool(r_dh < 2.0 and r_a < 1.0 - 1e-12),
        identifiable_passed=bool(rank > 0 and r_dh < 2.0 and r_id < 1.0 - 1e-12))


def _n_users_from_O(O, KN):
    # largest K with O = O_N kron I_K; any such split gives a valid projector
    for K in range(KN, 0, -1):
        if KN % K == 0 and np.allclose(np.kron(O[::K, ::K], np.eye(K)), O):
            return KN // K
    return KN


# ---------------------------------------------------------------- workspace

@dataclass
class TheoryWorkspace:
    """Everything the MSE formula needs, for one scene, beam and step size."""

    R: np.ndarray
    Hblk: np.ndarray
    D: np.ndarray
    O: np.ndarray
    U: np.ndarray
    B: np.ndarray
    alpha1: float
    alpha2: float
    Q: np.ndarray
    q: np.ndarray
    sigma_in2: float
    C: np.ndarray
    x0: np.ndarray
    mu: np.ndarray
    notes: dict = field(default_factory=dict)

    @property
    def N(self):
        return self.C.shape[0]

    @property
    def K(self):
        return self.x0.size

    @property
    def A(self):
        return (np.eye(self.K * self.N) - self.D @ self.Hblk) @ self.O.conj().T

    def stability(self):
        return stability_check(self.Hblk, self.D, self.O)

    def P_V(self, mode="dense"):
        return assemble_P_V(self.Hblk, self.D, self.C, mode)


def build_workspace(scene, w, C, mu, sigma_in2, x0=None, s_e_power=1.0):
    ch = _channels(scene)
    x0 = np.asarray(scene.x0 if x0 is None else x0, dtype=complex)
    C = np.asarray(C, dtype=float)
    if sigma_in2 < 0:
        raise ConfigError("sigma_in2 must be nonnegative")
    N, K = ch.N, ch.K
    if C.shape != (N, N):
        raise ConfigError(f"C has shape {C.shape}, expected ({N}, {N})")
    s = np.vdot(x0, x0).real + 1.0
    a1 = 4.0 * sigma_in2 / s
    R = covariance_R(ch, w, s_e_power)
    Q, q = gradient_error_cov(ch, w, x0, sigma_in2, s_e_power)
    B = a1 * np.kron(np.eye(N), sigma_in2 * np.eye(K) - 3.0 * sigma_in2 * np.outer(x0, x0.conj()) / s)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (N,)).copy()
    return TheoryWorkspace(
        R=R, Hblk=sla.block_diag(*(2.0 * R / s)), D=step_matrix(mu, N, K),
        O=combination_operator(C, K), U=channel_aggregate(ch), B=B,
        alpha1=a1, alpha2=2.0 / s, Q=Q, q=q, sigma_in2=float(sigma_in2),
        C=C, x0=x0, mu=mu)


# ---------------------------------------------------------------- MSE

@dataclass
class MsePrediction:
    mse: float
    alpha_bound: float = 0.0
    spectral_radius_DH: float = float("nan")
    restricted: bool = False
    identifiable_dim: int = 0
    method: str = "dense"
    q_psd: bool = True

    @property
    def total(self):
        return self.mse + self.alpha_bound

    @property
    def mse_db(self):
        return 10 * np.log10(self.total) if self.total > 0 else -np.inf


def stein_solve(A, tol=1e-14, max_doublings=64):
    """``Y = sum_k A^k (A^H)^k`` by repeated squaring (Smith iteration)."""
    Y = np.eye(A.shape[0], dtype=complex)
    Ak = np.asarray(A, dtype=complex)
    for _ in range(max_doublings):
        with np.errstate(over="ignore", invalid="ignore"):
            inc = Ak @ Y @ Ak.conj().T
            Y = Y + inc
            Ak = Ak @ Ak
        if not np.all(np.isfinite(Y)):
            break
        # max-abs, not Frobenius: the squared sum overflows long before Y does
        if np.abs(Ak).max() < 1.0 and np.abs(inc).max() <= tol * np.abs(Y).max():
            return Y
    raise StabilityError("Stein iteration did not converge; rho(A) >= 1")


def _mse_from(A, Q, DOh, method):
    KN = A.shape[0]
    if method == "dense":
        if KN > DENSE_KN_CAP:
            raise SizeError(f"dense solve needs KN <= {DENSE_KN_CAP}, got {KN}")
        P = np.kron(A.conj(), A)
        V = np.kron(DOh.conj(), DOh)
        try:
            y = np.linalg.solve(np.eye(KN * KN) - P, vec(np.eye(KN)))
        except np.linalg.LinAlgError as exc:
            raise StabilityError(f"I - P is singular: {exc}") from None
        val = np.vdot(vec(Q), V @ y)
    else:
        Y = stein_solve(A)
        val = np.trace(Q @ DOh @ Y @ DOh.conj().T)
    return float(val.real)


def q_is_psd(Q, rtol=1e-10):
    """``lambda_min(Q) >= -rtol ||Q||``."""
    if not np.any(Q):
        return True
    return bool(np.linalg.eigvalsh((Q + Q.conj().T) / 2).min() >= -rtol * np.linalg.norm(Q))


def steady_state_mse(ws, alpha_bound=0.0, method="auto", restrict=False):
    """``q^H V (I - P)^{-1} vec(I) + alpha``.

    ``restrict=True`` evaluates the formula on the identifiable subspace
    when the full recursion is only marginally stable (the blind directions
    never contract, so their share is unbounded and left out).
    """
    st = ws.stability()
    q_psd = q_is_psd(ws.Q)
    if not q_psd:
        warnings.warn("gradient-noise covariance Q is indefinite (large sigma_in2 * ||x0||^2); "
                      "the prediction may be negative", RuntimeWarning, stacklevel=2)
    if method == "auto":
        method = "dense" if ws.K * ws.N <= DENSE_KN_CAP else "iterative"
    DOh = ws.D @ ws.O.conj().T
    if st.passed:
        mse = _mse_from(ws.A, ws.Q, DOh, method)
        return MsePrediction(mse, alpha_bound, st.spectral_radius_DH, False, st.identifiable_dim,
                             method, q_psd)
    if restrict and st.identifiable_passed:
        Pi, rank = identifiable_projector(ws.Hblk, ws.N)
        Pn = np.kron(np.eye(ws.N), Pi)
        mse = _mse_from(ws.A @ Pn, Pn @ ws.Q @ Pn, DOh, method)
        return MsePrediction(mse, alpha_bound, st.spectral_radius_DH, True, rank, method, q_psd)
    raise StabilityError(
        f"unstable recursion: rho(DH)={st.spectral_radius_DH:.4g}, rho(A)={st.spectral_radius_A:.6g}, "
        f"rho(A on identifiable subspace)={st.spectral_radius_A_identifiable:.6g}")


# ---------------------------------------------------------------- F2

@dataclass
class F2Model:
    """``F2(W) = const + Re tr(slope W)`` with ``W = w w^H`` (M x M)."""

    const: float
    slope: np.ndarray
    tikhonov: float
    gamma: np.ndarray

    def __call__(self, W):
        W = np.asarray(W)
        if W.ndim == 1:
            W = np.outer(W, W.conj())
        return float(self.const + np.real(np.trace(self.slope @ W)))


def consensus_gram(C, tikhonov=TIKHONOV_DEFAULT):
    """``Gamma = C Y C^H`` with ``(1+tau) Y = I + C Y C^H``."""
    C = np.asarray(C, dtype=float)
    r = 1.0 / (1.0 + tikhonov)
    Y = sla.solve_discrete_lyapunov(np.sqrt(r) * C, r * np.eye(C.shape[0]))
    return C @ Y @ C.conj().T


def f2_model(scene, C, mu, sigma_in2, x0=None, s_e_power=1.0, tikhonov=TIKHONOV_DEFAULT):
    """Affine sensing metric under ``P ~ O^H kron O^H``.

    ``I - O^H kron O^H`` is singular for any stochastic ``C``; the shift
    ``tikhonov`` is always applied and a warning issued when it matters.
    """
    ch = _channels(scene)
    x0 = np.asarray(scene.x0 if x0 is None else x0, dtype=complex)
    C = np.asarray(C, dtype=float)
    N, K = ch.N, ch.K
    if tikhonov <= 0:
        raise StabilityError("I - O^H kron O^H is singular; a positive shift is required")
    eig = np.abs(np.linalg.eigvals(C))
    if np.any(eig > 1 - 1e-12):
        warnings.warn(f"I - O^H kron O^H is singular (|eig(C)| = 1); solved with shift {tikhonov:g}",
                      RuntimeWarning, stacklevel=2)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (N,))
    s = np.vdot(x0, x0).real + 1.0
    a1 = 4.0 * sigma_in2 / s
    gamma = np.real(np.diag(consensus_gram(C, tikhonov))) * mu ** 2
    trB = a1 * (K * sigma_in2 - 3.0 * sigma_in2 * (s - 1.0) / s)
    const = float(np.sum(gamma) * trB)
    # tr(R_l) = |s_e|^2 tr(W G diag|h_l|^2 G^H)
    slope = sum(gamma[l] * (ch.G * np.abs(ch.h[l]) ** 2) @ ch.G.conj().T for l in range(N))
    slope = a1 * s_e_power * slope
    return F2Model(const, slope, tikhonov, gamma)


def theory_F2(scene, C, mu, w, sigma_in2, x0=None, s_e_power=1.0, tikhonov=TIKHONOV_DEFAULT):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = f2_model(scene, C, mu, sigma_in2, x0, s_e_power, tikhonov)
    return model(np.asarray(w, dtype=complex))


def theory_F2_dense(scene, C, mu, w, sigma_in2, x0=None, s_e_power=1.0, tikhonov=TIKHONOV_DEFAULT):
    """Literal Kronecker evaluation of :func:`theory_F2` (small sizes only)."""
    ch = _channels(scene)
    x0 = np.asarray(scene.x0 if x0 is None else x0, dtype=complex)
    N, K = ch.N, ch.K
    if K * N > DENSE_KN_CAP:
        raise SizeError(f"dense F2 needs KN <= {DENSE_KN_CAP}")
    q = gradient_error_cov_factored(ch, w, x0, sigma_in2, s_e_power)
    D = step_matrix(mu, N, K)
    Oh = combination_operator(C, K).conj().T
    P0 = np.kron(Oh.conj(), Oh)
    V = np.kron((D @ Oh).conj(), D @ Oh)
    n2 = (K * N) ** 2
    y = np.linalg.solve((1 + tikhonov) * np.eye(n2) - P0, vec(np.eye(K * N)))
    return float(np.vdot(q, V @ y).real)


# ---------------------------------------------------------------- report

def theory_report(ws, prediction, f2=None, params=None):
    st = ws.stability()
    return {
        "spectral_radius": {
            "DH": st.spectral_radius_DH,
            "I_minus_DH": st.spectral_radius_I_minus_DH,
            "A": st.spectral_radius_A,
            "A_identifiable": st.spectral_radius_A_identifiable,
        },
        "stable": st.passed,
        "stable_identifiable": st.identifiable_passed,
        "identifiable_dim": st.identifiable_dim,
        "mse_predicted": prediction.mse if prediction is not None else None,
        "mse_restricted": prediction.restricted if prediction is not None else None,
        "alpha_bound": prediction.alpha_bound if prediction is not None else None,
        "q_psd": prediction.q_psd if prediction is not None else None,
        "f2": f2,
        "params": params or {},
    }


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=True)
