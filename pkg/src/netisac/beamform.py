"""Joint sensing/communication beam design: SDR lifting, penalty DCA, randomization.

The lifted variable is ``Z = blkdiag(W, F)`` with ``W = w w^H`` and
``F = f f^H``.  Matrix gradients use the convention ``dh = Re tr(X dZ)`` for
Hermitian perturbations ``dZ``.

The sensing metric enters through an affine model ``F2(W) = c + Re tr(S W)``
(:class:`netisac.theory.F2Model`).  ``S`` is PSD, so that model alone never
rewards sensing power; see the notes in the project README.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NormalizationError, SubproblemError

INNER_TOL = 1e-8
INNER_MAX = 5000
EQ_TOL = 1e-7


@dataclass
class BeamformProblem:
    g: np.ndarray
    sigma2: float
    P_budget: float
    beta1: float
    f2: object                    # callable W -> F2, with .const and .slope
    beta2: float = None
    F1_star: float = None
    F2_star: float = None
    G_count: int = 50

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=complex).ravel()
        if self.beta2 is None:
            self.beta2 = 1.0 - self.beta1
        if self.beta1 < 0 or self.beta2 < 0 or abs(self.beta1 + self.beta2 - 1.0) > 1e-12:
            raise ConfigError("beta1, beta2 must be nonnegative and sum to 1")
        if self.P_budget <= 0:
            raise ConfigError("P_budget must be positive")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if self.G_count < 1:
            raise ConfigError("G_count must be at least 1")

    @property
    def M(self):
        return self.g.size

    @property
    def ggH(self):
        return np.outer(self.g, self.g.conj())


@dataclass
class LiftedVariable:
    Z: np.ndarray

    @classmethod
    def from_blocks(cls, W, F):
        M = W.shape[0]
        Z = np.zeros((2 * M, 2 * M), dtype=complex)
        Z[:M, :M] = W
        Z[M:, M:] = F
        return cls(Z)

    @property
    def M(self):
        return self.Z.shape[0] // 2

    @property
    def W(self):
        return self.Z[:self.M, :self.M]

    @property
    def F(self):
        return self.Z[self.M:, self.M:]

    @property
    def trace(self):
        return float(np.trace(self.Z).real)


def _lift(Z):
    return Z if isinstance(Z, LiftedVariable) else LiftedVariable(np.asarray(Z, dtype=complex))


# ------------------------------------------------------------------ metrics

def sinr_F1(w, f, g, sigma2):
    """``|g^H f|^2 / (sigma^2 + |g^H w|^2)``."""
    g = np.asarray(g)
    return float(abs(np.vdot(g, f)) ** 2 / (sigma2 + abs(np.vdot(g, w)) ** 2))


def sinr_lifted(W, F, g, sigma2):
    gg = np.outer(g, np.conj(g))
    return float(np.trace(gg @ F).real / (sigma2 + np.trace(gg @ W).real))


def performance_limits(problem):
    """``F1* = P ||g||^2 / sigma^2``; ``F2* = min F2(W)`` over ``W >= 0, tr W <= P``.

    ``F2`` is affine in ``W``, so its minimum over that set sits at ``W = 0``
    or at ``P v v^H`` for the smallest eigenvector ``v`` of the slope.
    """
    F1s = problem.P_budget * np.vdot(problem.g, problem.g).real / problem.sigma2
    lam_min = float(np.linalg.eigvalsh(_herm(problem.f2.slope))[0])
    F2s = float(problem.f2.const + problem.P_budget * min(lam_min, 0.0))
    return float(F1s), F2s


def normalize_psi(F_p, F_star_p):
    if F_star_p == 0:
        raise NormalizationError("performance limit is zero; cannot normalize")
    return (F_p - F_star_p) / abs(F_star_p)


def _limits(problem):
    if problem.F1_star is None or problem.F2_star is None:
        F1s, F2s = performance_limits(problem)
        problem.F1_star = F1s if problem.F1_star is None else problem.F1_star
        problem.F2_star = F2s if problem.F2_star is None else problem.F2_star
    return problem.F1_star, problem.F2_star


def penalty(Z, P_budget, delta):
    """``delta * max(tr W + tr F - P, 0)``."""
    return float(delta * max(_lift(Z).trace - P_budget, 0.0))


def _psi1(Z, problem):
    F1s, _ = _limits(problem)
    Zl = _lift(Z)
    return normalize_psi(sinr_lifted(Zl.W, Zl.F, problem.g, problem.sigma2), F1s)


def _psi2(Z, problem):
    _, F2s = _limits(problem)
    return normalize_psi(problem.f2(_lift(Z).W), F2s)


# ------------------------------------------------------------------ DCA pieces

@dataclass
class DcaState:
    delta: float = 1.0
    epsilon: float = 1.0
    Z: np.ndarray = None
    history: list = field(default_factory=list)


def dca_objective(Z, state, problem):
    """``(phi, g, h)`` with ``g = beta2 Psi2 + delta p+`` and ``h = beta1 Psi1``."""
    g_val = problem.beta2 * _psi2(Z, problem) + penalty(Z, problem.P_budget, state.delta)
    h_val = problem.beta1 * _psi1(Z, problem)
    return g_val - h_val, g_val, h_val


def subgradient_h(Z, problem):
    """Gradient of ``beta1 Psi1`` at ``Z`` as a block-diagonal 2M x 2M matrix."""
    F1s, _ = _limits(problem)
    Zl = _lift(Z)
    gg = problem.ggH
    den = problem.sigma2 + np.trace(gg @ Zl.W).real
    num = np.trace(gg @ Zl.F).real
    scale = problem.beta1 / abs(F1s)
    X = LiftedVariable.from_blocks(-scale * num / den ** 2 * gg, scale / den * gg)
    return X.Z


def _herm(A):
    return (A + A.conj().T) / 2


def _shift_for_sum(lam, target):
    """Smallest ``theta >= 0`` with ``sum(max(lam - theta, 0)) <= target``."""
    lam = np.sort(lam)[::-1]
    if np.maximum(lam, 0).sum() <= target:
        return 0.0
    csum = np.cumsum(lam)
    for k in range(1, lam.size + 1):
        theta = (csum[k - 1] - target) / k
        if k == lam.size or lam[k] <= theta:
            return max(theta, 0.0)
    return 0.0


def _prox_eigs(lam, tdelta, P, cap):
    """Prox of ``tdelta (sum x - P)_+`` over ``x >= 0, sum x <= cap``."""
    s = lambda th: np.maximum(lam - th, 0).sum()
    if s(0.0) <= P:
        th = 0.0
    elif s(tdelta) <= P:
        th = _shift_for_sum(lam, P)
    elif s(tdelta) <= cap:
        th = tdelta
    else:
        th = _shift_for_sum(lam, cap)
    return np.maximum(lam - th, 0.0)


def _prox_step(Z, G, t, delta, P, cap, M):
    blocks = []
    for sl in (slice(0, M), slice(M, 2 * M)):
        vals, vecs = np.linalg.eigh(_herm(Z[sl, sl] - t * G[sl, sl]))
        blocks.append((vals, vecs))
    lam = np.concatenate([b[0] for b in blocks])
    x = _prox_eigs(lam, t * delta, P, cap)
    out = np.zeros_like(Z)
    for j, (sl, (_, vecs)) in enumerate(zip((slice(0, M), slice(M, 2 * M)), blocks)):
        xs = x[j * M:(j + 1) * M]
        out[sl, sl] = (vecs * xs) @ vecs.conj().T
    return out


def _surrogate(Z, lin, delta, P):
    return float(np.real(np.trace(lin @ Z))) + delta * max(np.trace(Z).real - P, 0.0)


def solve_convex_subproblem(state, X, problem, cap_factor=2.0, tol=INNER_TOL, max_iter=INNER_MAX):
    """``argmin_Z g_t(Z) - <Z, X>`` over block-diagonal PSD ``Z`` with ``tr Z <= cap_factor P``.

    Proximal gradient: a step along the linear part, then eigenvalue
    clipping with the trace hinge and cap folded into the projection.
    """
    _, F2s = _limits(problem)
    M, P = problem.M, problem.P_budget
    lin = np.zeros((2 * M, 2 * M), dtype=complex)
    lin[:M, :M] = problem.beta2 * _herm(problem.f2.slope) / abs(F2s) if problem.beta2 else 0.0
    lin = lin - np.asarray(X)
    delta = state.delta
    cap = cap_factor * P
    Z = np.asarray(state.Z, dtype=complex).copy()
    # the smooth part is linear (Lipschitz constant 0), so any step descends;
    # doubling it lets weak directions reach the boundary in a few dozen steps
    t = P / (np.linalg.norm(lin, 2) + 1e-300)
    t_max = 1e12 * t
    prev = _surrogate(Z, lin, delta, P)
    for it in range(max_iter):
        Z_new = _prox_step(Z, lin, t, delta, P, cap, M)
        t = min(2.0 * t, t_max)
        cur = _surrogate(Z_new, lin, delta, P)
        if not np.isfinite(cur):
            raise SubproblemError("non-finite surrogate value", Z, float("nan"))
        step = np.linalg.norm(Z_new - Z)
        Z = Z_new
        if abs(prev - cur) < tol * max(1.0, abs(cur)) and step < 1e-9 * max(1.0, P):
            return Z
        prev = cur
    raise SubproblemError(f"inner solver did not converge in {max_iter} iterations", Z,
                          abs(prev - cur))


def dca_optimize(problem, Z_init=None, epsilon=1.0, T_max=200, delta1=1.0):
    """Penalty DCA with the adaptive penalty update; returns ``(Z, state)``."""
    _limits(problem)
    M, P = problem.M, problem.P_budget
    if Z_init is None:
        Z_init = (P / (4 * M)) * np.eye(2 * M, dtype=complex)
    Z = LiftedVariable(np.asarray(Z_init, dtype=complex)).Z.copy()
    Z[:M, M:] = 0
    Z[M:, :M] = 0
    state = DcaState(delta=delta1, epsilon=epsilon, Z=Z)
    phi0, g0, h0 = dca_objective(Z, state, problem)
    state.history.append(dict(t=0, delta=state.delta, phi=phi0, g=g0, h=h0,
                              trace=_lift(Z).trace, change=float("nan")))
    for t in range(1, T_max + 1):
        X = subgradient_h(state.Z, problem)
        Z_new = solve_convex_subproblem(state, X, problem)
        change = float(np.linalg.norm(Z_new - state.Z))
        r = _lift(Z_new).trace - P
        phi, g_val, h_val = dca_objective(Z_new, state, problem)
        state.history.append(dict(t=t, delta=state.delta, phi=phi, g=g_val, h=h_val,
                                  trace=_lift(Z_new).trace, change=change))
        state.Z = Z_new
        if change < EQ_TOL and r <= 1e-9:
            break
        if state.delta * change < 1 and r > 0:
            state.delta += epsilon
    if _lift(state.Z).trace > P + 1e-6:
        import warnings
        warnings.warn("DCA stopped infeasible; scaling the iterate onto the power budget",
                      RuntimeWarning, stacklevel=2)
        state.Z = state.Z * (P / _lift(state.Z).trace)
    return state.Z, state


# ------------------------------------------------------------------ randomization

def _objective_vec(w, f, problem):
    F1s, F2s = _limits(problem)
    F1 = sinr_F1(w, f, problem.g, problem.sigma2)
    F2 = problem.f2(np.outer(w, np.conj(w)))
    return -problem.beta1 * normalize_psi(F1, F1s) + problem.beta2 * normalize_psi(F2, F2s)


def _sample(rng, S, count):
    vals, vecs = np.linalg.eigh(_herm(S))
    root = vecs * np.sqrt(np.clip(vals, 0, None))
    z = (rng.standard_normal((S.shape[0], count)) + 1j * rng.standard_normal((S.shape[0], count))) / np.sqrt(2)
    return (root @ z).T


def gaussian_randomization(W_opt, F_opt, problem, G_count=None, seed=0):
    """Draw ``nu ~ CN(0, W)``, ``xi ~ CN(0, F)``, rescale to full power, keep the best pair."""
    G_count = problem.G_count if G_count is None else G_count
    if G_count < 1:
        raise ConfigError("G_count must be at least 1")
    rng = np.random.default_rng(seed)
    nus = _sample(rng, W_opt, G_count)
    xis = _sample(rng, F_opt, G_count)
    best, best_val = None, np.inf
    for nu, xi in zip(nus, xis):
        pw = np.vdot(nu, nu).real + np.vdot(xi, xi).real
        if pw <= 0:
            continue
        c = np.sqrt(problem.P_budget / pw)
        val = _objective_vec(c * nu, c * xi, problem)
        if val < best_val:
            best, best_val = (c * nu, c * xi), val
    if best is None:
        raise SubproblemError("every randomization candidate has zero power")
    return best


# ------------------------------------------------------------------ driver

@dataclass
class BeamformReport:
    beta1: float
    F1: float
    F2: float
    Psi1: float
    Psi2: float
    power_used: float
    dca_iters: int
    history: list
    w: np.ndarray
    f: np.ndarray
    mse_full: float = None

    def to_dict(self):
        return {
            "beta1": self.beta1, "F1": self.F1, "F2": self.F2,
            "Psi1": self.Psi1, "Psi2": self.Psi2, "power_used": self.power_used,
            "dca_iters": self.dca_iters, "history": self.history,
            "mse_full": self.mse_full,
            "w_re": self.w.real.tolist(), "w_im": self.w.imag.tolist(),
            "f_re": self.f.real.tolist(), "f_im": self.f.imag.tolist(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def optimize_beamformers(problem, seed=0, T_max=200, epsilon=1.0, full_mse=None):
    """DCA on the lifted problem, then randomization; ``full_mse(w)`` is optional."""
    F1s, F2s = _limits(problem)
    Z, state = dca_optimize(problem, epsilon=epsilon, T_max=T_max)
    Zl = LiftedVariable(Z)
    w, f = gaussian_randomization(Zl.W, Zl.F, problem, seed=seed)
    F1 = sinr_F1(w, f, problem.g, problem.sigma2)
    F2 = problem.f2(np.outer(w, w.conj()))
    mse = None
    if full_mse is not None:
        try:
            mse = float(full_mse(w))
        except ArithmeticError:
            mse = None
    return BeamformReport(
        problem.beta1, F1, F2, normalize_psi(F1, F1s), normalize_psi(F2, F2s),
        float(np.vdot(w, w).real + np.vdot(f, f).real), len(state.history) - 1,
        state.history, w, f, mse)
