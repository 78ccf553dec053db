"""Two-step sensing: coarse estimate, data-symbol recovery, cancellation, re-estimate.

Sensing users know ``s_e``, the beams and the channels but not ``s_d``; the
data term ``s_d f^H G diag(h_n) x`` is therefore unobservable input noise in
the first step.  Its rank-one time structure is exploited after the first
pass: the residuals of all users share the same ``s_d`` direction, which is
recovered by an SVD and subtracted before the second pass.

The rank-one factor of ``yhat z^H`` is ``yhat / ||yhat||`` for every nonzero
``z``, so the auxiliary vector ``z_n`` cannot influence the recovered symbol
direction; it is fixed to all-ones.  The SVD factors are named
``left``/``sing``/``right`` here.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateEstimateError
from .sensing import EstimatorParams, Trajectory, run_centralized, run_distributed
from .waveform import beam_rows

SVD_MODES = ("network", "per_user", "average")


@dataclass(frozen=True)
class TwoStepConfig:
    step1_params: EstimatorParams
    step2_params: EstimatorParams
    varpi2: float = 0.0
    svd_mode: str = "network"
    estimator: str = "distributed"
    keep_symbols: bool = False
    step2_warm_start: bool = False
    refit_sensing: bool = False

    def __post_init__(self):
        if self.varpi2 < 0:
            raise ConfigError("varpi2 must be nonnegative")
        if self.svd_mode not in SVD_MODES:
            raise ConfigError(f"svd_mode must be one of {SVD_MODES}")
        if self.estimator not in ("distributed", "centralized"):
            raise ConfigError("estimator must be 'distributed' or 'centralized'")


@dataclass
class DataSymbolEstimate:
    """Unit-norm data-symbol direction(s) and the per-user fitted scale.

    ``directions[n]`` is the direction user ``n`` cancels with; in the
    network mode every row equals ``s_hat_d``.
    """

    s_hat_d: np.ndarray
    directions: np.ndarray
    scale: np.ndarray

    def correlation(self, s_d):
        """``|s_hat^H s| / (||s_hat|| ||s||)``."""
        return symbol_correlation(self.s_hat_d, s_d)


def symbol_correlation(s_hat, s):
    s_hat = np.asarray(s_hat)
    s = np.asarray(s)
    den = np.linalg.norm(s_hat) * np.linalg.norm(s)
    return float(abs(np.vdot(s_hat, s)) / den) if den > 0 else 0.0


# ------------------------------------------------------------------ inputs

def interference_row(beams, channels, streams, n, i):
    """``e_{n,i} = s_d,i f^H G diag(h_n)`` as a row."""
    return streams.s_d[i] * (np.conj(beams.f) @ channels.G) * channels.h[n]


def step1_inputs(scene, beams, streams, measurements, n, i, include_interference=False):
    """``(y_{n,i}, u)`` for the first pass.

    By default ``u`` is the regressor a sensing user can actually form,
    ``(s_e,i w^H G diag(h_n))^H``; the data term is left in ``y`` as input
    noise.  ``include_interference=True`` returns the full perturbed row
    ``(s_e,i w^H G diag(h_n) + e_{n,i})^H`` of the signal model instead.
    """
    row = streams.s_e[i] * (np.conj(beams.w) @ scene.channels.G) * scene.channels.h[n]
    if include_interference:
        row = row + interference_row(beams, scene.channels, streams, n, i)
    return complex(measurements.y[n, i]), np.conj(row)


def observable_regressors(scene, beams, streams):
    """Stacked ``U[n, i] = (s_e,i w^H G diag(h_n))^H``, shape (N, T, K)."""
    rows = beam_rows(beams.w, scene.channels)
    return np.conj(streams.s_e)[None, :, None] * np.conj(rows)[:, None, :]


def residual_signal(y_n, scene, beams, streams, x_hat, n):
    """``y_n - s_e * (w^H G diag(h_n) x_hat)`` over the whole horizon."""
    row = (np.conj(beams.w) @ scene.channels.G) * scene.channels.h[n]
    return np.asarray(y_n) - streams.s_e * (row @ np.asarray(x_hat))


def residuals(scene, beams, streams, measurements, x_hats):
    """All users' residuals; ``x_hats`` is (N, K) or a shared (K,) estimate."""
    rows = beam_rows(beams.w, scene.channels)
    x_hats = np.broadcast_to(np.asarray(x_hats), rows.shape)
    pred = np.einsum("nk,nk->n", rows, x_hats)
    return measurements.y - np.outer(pred, streams.s_e)


def project_out(res, s_e):
    """Remove from every residual its least-squares component along ``s_e``."""
    s_e = np.asarray(s_e)
    coef = (res @ s_e.conj()) / np.vdot(s_e, s_e).real
    return res - np.outer(coef, s_e)


# ------------------------------------------------------------- symbol recovery

def rank_one_left_vector(y_hat, z=None):
    """Leading left singular vector of ``y_hat z^H``.

    The matrix is an exact outer product, so its SVD is
    ``(y_hat/||y_hat||) (||y_hat|| ||z||) (z/||z||)^H``; forming the T x T
    matrix is unnecessary.
    """
    y_hat = np.asarray(y_hat, dtype=complex)
    nrm = np.linalg.norm(y_hat)
    if z is not None and np.linalg.norm(z) == 0:
        raise DegenerateEstimateError("z_n must be nonzero")
    if nrm == 0:
        raise DegenerateEstimateError("zero residual")
    return y_hat / nrm


def _fix_phase(s, reference):
    """Rotate ``s`` so its first entry has the phase of ``reference`` (default real positive)."""
    idx = int(np.argmax(np.abs(s) > 0))
    target = 1.0 if reference is None else reference / abs(reference)
    cur = s[idx] / abs(s[idx])
    return s * (target / cur)


def estimate_data_symbols(res, mode="network", reference=None):
    """Recover the data-symbol direction from the residuals ``res`` (N, T).

    ``network`` takes the leading left singular vector of the T x N matrix of
    all residuals; ``per_user`` uses each user's own rank-one factor;
    ``average`` phase-aligns the per-user factors to the first active user
    and averages them.  ``scale[n]`` is the least-squares fit of user ``n``'s
    residual onto its direction.
    """
    res = np.atleast_2d(np.asarray(res, dtype=complex))
    active = np.linalg.norm(res, axis=1) > 0
    if not active.any():
        raise DegenerateEstimateError("all residuals are zero")
    if mode == "network":
        left, _, _ = np.linalg.svd(res.T, full_matrices=False)
        s_hat = _fix_phase(left[:, 0], reference)
        directions = np.broadcast_to(s_hat, res.shape).copy()
    elif mode in ("per_user", "average"):
        directions = np.zeros_like(res)
        for n in np.flatnonzero(active):
            directions[n] = _fix_phase(rank_one_left_vector(res[n]), reference)
        if mode == "average":
            ref = directions[np.flatnonzero(active)[0]]
            acc = np.zeros(res.shape[1], dtype=complex)
            for n in np.flatnonzero(active):
                ph = np.vdot(directions[n], ref)
                acc += directions[n] * (ph / abs(ph) if ph != 0 else 1.0)
            s_hat = _fix_phase(acc / np.linalg.norm(acc), reference)
            directions = np.broadcast_to(s_hat, res.shape).copy()
        else:
            s_hat = directions[np.flatnonzero(active)[0]]
    else:
        raise ConfigError(f"svd mode must be one of {SVD_MODES}")
    scale = np.einsum("nt,nt->n", directions.conj(), res)
    return DataSymbolEstimate(s_hat, directions, scale)


def cancellation(beams, estimate):
    """Per-user interference estimate ``scale_n * s_hat`` (zero when ``f = 0``)."""
    if not np.any(beams.f):
        return np.zeros_like(estimate.directions)
    return estimate.scale[:, None] * estimate.directions


def step2_inputs(scene, beams, streams, measurements, x_hat, estimate, n, i):
    """``(y_tilde, u2)`` for the second pass at user ``n``, slot ``i``."""
    y_t = measurements.y[n, i] - cancellation(beams, estimate)[n, i]
    row = streams.s_e[i] * (np.conj(beams.w) @ scene.channels.G) * scene.channels.h[n]
    return complex(y_t), np.conj(row)


# ------------------------------------------------------------------ pipeline

@dataclass
class TwoStepResult:
    step1: Trajectory
    step2: Trajectory
    symbol_correlation: float
    scale: np.ndarray
    symbols: DataSymbolEstimate = None
    extras: dict = field(default_factory=dict)


def _estimate(Y, U, C, params, grid, estimator, x_init=None):
    if estimator == "centralized":
        if x_init is not None and np.ndim(x_init) == 2:
            x_init = np.asarray(x_init)[0]
        return run_centralized(Y, U, params, x_init, grid)
    return run_distributed(Y, U, C, params, x_init, grid)


def run_two_step(scene, beams, streams, measurements, C, config, step1_only=False):
    """Both passes with the chosen inner estimator; returns a :class:`TwoStepResult`."""
    U = observable_regressors(scene, beams, streams)
    traj1 = _estimate(measurements.y, U, C, config.step1_params, scene.grid, config.estimator)
    if step1_only:
        return TwoStepResult(traj1, traj1, float("nan"), np.zeros(scene.N, dtype=complex))

    x_hat = traj1.final
    if x_hat.shape[0] == 1:
        x_hat = np.broadcast_to(x_hat[0], (scene.N, scene.K))
    res = residuals(scene, beams, streams, measurements, x_hat)
    if config.refit_sensing:
        res = project_out(res, streams.s_e)
    est = estimate_data_symbols(res, config.svd_mode)
    y_tilde = measurements.y - cancellation(beams, est)
    x_init = x_hat if config.step2_warm_start else None
    traj2 = _estimate(y_tilde, U, C, config.step2_params, scene.grid, config.estimator, x_init)
    return TwoStepResult(
        traj1, traj2, est.correlation(streams.s_d), est.scale,
        est if config.keep_symbols else None)
