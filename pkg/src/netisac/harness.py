"""Experiment configuration, MSD metrics, runs and sweeps.

Every random draw comes from a substream keyed by ``(purpose, run, user)``
under the master seed, so adding a variant or a sweep point never shifts
another one's numbers.  All variants of a run share its scene, graph,
symbols and noise.
"""

import csv
import dataclasses
import io
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import theory
from .beamform import BeamformProblem, optimize_beamformers
from .errors import ConfigError, NetIsacError, ProtocolError, StabilityError
from .scene import ChannelModel, make_scene
from .sensing import EstimatorParams
from .topology import build_random_network, metropolis_weights
from .two_step import TwoStepConfig, run_two_step
from .waveform import BeamformerPair, NoiseConfig, batch_rx, beam_rows, gen_symbols

VARIANTS = ("two-step", "step1-only", "no-penalty", "element-only", "centralized")
SWEEP_AXES = ("L", "N", "K", "beta1", "SNR")
FLOOR_DB = -300.0

_PURPOSES = {"scene": 1, "graph": 2, "beam": 3, "symbols": 4, "noise": 5, "randomization": 6}


def substream_seed(master, purpose, run=0, user=0):
    """Integer seed for one named substream of ``master``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(_PURPOSES[purpose], int(run), int(user)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def threads_from_env(default=1):
    raw = os.environ.get("NETISAC_THREADS")
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NETISAC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("NETISAC_THREADS must be at least 1")
    return n


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    dims: tuple = (2, 2, 2)
    M: int = 4
    N: int = 5
    avg_degree: float = 3.0
    snr_db: float = 10.0
    P: float = 10.0
    T: int = 600
    L: int = 2
    runs: int = 20
    master_seed: int = 0
    amplitude: float = 1.0
    channel_model: str = "rayleigh"
    symbols: str = "qpsk"
    sensing_fraction: float = 0.9
    beam_source: str = "split"
    step_factor: float = 1.0
    eta1: float = 0.1
    eta2: float = 0.1
    varpi2: float = 0.0
    svd_mode: str = "network"
    refit_sensing: bool = True
    warm_start: bool = True
    variants: tuple = VARIANTS
    settle: int = 600
    window: int = 150
    beta1: float = 0.5
    beta1_values: tuple = (0.1, 0.5, 0.9)
    G_count: int = 50
    l_fraction: float = 0.125
    tikhonov: float = theory.TIKHONOV_DEFAULT
    fixed_scene: bool = False
    output_dir: str = "netisac_out"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.variants = tuple(self.variants)
        self.beta1_values = tuple(float(b) for b in self.beta1_values)
        for name in ("M", "N", "T", "runs", "settle", "window", "G_count"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError("dims must be three positive integers")
        if not np.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        if self.P <= 0:
            raise ConfigError("P must be positive")
        if not 0 <= self.L <= self.K:
            raise ConfigError(f"L={self.L} outside [0, K={self.K}]")
        if not self.variants:
            raise ConfigError("variant list is empty")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}; choose from {VARIANTS}")
        if not 0 < self.sensing_fraction <= 1:
            raise ConfigError("sensing_fraction must lie in (0, 1]")
        if self.beam_source not in ("split", "optimized"):
            raise ConfigError("beam_source must be 'split' or 'optimized'")
        if self.window > self.settle:
            raise ConfigError("window must not exceed settle")
        if self.N > 1 and not 0 < self.avg_degree <= self.N - 1:
            raise ConfigError(f"avg_degree must lie in (0, N-1={self.N - 1}]")

    @property
    def K(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def sigma_o2(self):
        return self.P / 10.0 ** (self.snr_db / 10.0)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["dims"] = list(self.dims)
        d["variants"] = list(self.variants)
        d["beta1_values"] = list(self.beta1_values)
        return d

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


# ------------------------------------------------------------------ metrics

@dataclass
class MsdSeries:
    """Network MSD in dB over iterations 0..T; ``per_run`` holds each run's linear MSD."""

    db: np.ndarray
    per_run: np.ndarray = None
    steady: float = None


def _network_msd(trajectory, x0):
    return trajectory.squared_deviation(x0).mean(axis=1)


def _to_db(lin):
    lin = np.asarray(lin, dtype=float)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(lin)
    return np.maximum(np.where(lin > 0, db, FLOOR_DB), FLOOR_DB)


def msd_curve(trajectory, x0, settle=None, window=None):
    """``10 log10(mean_k ||x0 - x_k,i||^2)``, averaged over runs in the linear domain.

    ``trajectory`` may be one :class:`~netisac.sensing.Trajectory` or a list of
    them (one per run); ``x0`` is then a single vector or one per run.
    """
    trajs = trajectory if isinstance(trajectory, (list, tuple)) else [trajectory]
    x0s = x0 if isinstance(x0, (list, tuple)) else [x0] * len(trajs)
    per_run = np.array([_network_msd(t, x) for t, x in zip(trajs, x0s)])
    series = MsdSeries(_to_db(per_run.mean(axis=0)), per_run)
    if settle is not None:
        series.steady = steady_msd(series, settle, window)
    return series


def steady_msd(series, settle=600, window=150):
    """Mean of the ``window`` samples ending at iteration ``settle``.

    An :class:`MsdSeries` is indexed by iteration (entry 0 is the initial
    state); a bare array is read as samples after iterations 1, 2, ...
    """
    if isinstance(series, MsdSeries):
        vals = np.asarray(series.db)[1:]
    else:
        vals = np.asarray(series, dtype=float)
    if window < 1 or window > settle:
        raise ProtocolError(f"window must lie in [1, settle={settle}]")
    if vals.size < settle:
        raise ProtocolError(f"series has {vals.size} samples, protocol needs {settle}")
    return float(np.mean(vals[settle - window:settle]))


# ------------------------------------------------------------------ one run

@dataclass
class RunInstance:
    scene: object
    C: np.ndarray
    graph: object
    beams: BeamformerPair
    streams: object
    measurements: object
    noise: NoiseConfig
    mu: float
    run: int
    seed: int


def step_size(scene, w, step_factor):
    """``step_factor / max_n lambda_max(H_n)``, from the same Hessian as the stability check."""
    H = theory.hessian_blocks(scene, w, scene.x0)
    lam = np.linalg.eigvalsh(H).max()
    if lam <= 0:
        raise ConfigError("sensing beam illuminates nothing; cannot pick a step size")
    return float(step_factor / lam)


def effective_steps(mu):
    """The recursion moves by half the gradient: ``D = mu / 2`` in the theory."""
    return np.asarray(mu, dtype=float) / 2.0


def sensing_noise_var(cfg, scene=None, beams=None, step=2):
    """Input-noise variance fed to the theory for the chosen pass."""
    if step == 1:
        return cfg.sigma_o2 + theory.interference_variance(scene, beams.f)
    return cfg.sigma_o2 + cfg.varpi2


def split_beams(cfg, scene, run):
    rng = np.random.default_rng(substream_seed(cfg.master_seed, "beam", run))
    d = rng.standard_normal(cfg.M) + 1j * rng.standard_normal(cfg.M)
    d /= np.linalg.norm(d)
    g = scene.channels.g
    w = np.sqrt(cfg.P * cfg.sensing_fraction) * d
    f = np.sqrt(cfg.P * (1.0 - cfg.sensing_fraction)) * g / np.linalg.norm(g)
    return BeamformerPair(w, f)


def build_instance(cfg, run):
    """Scene, graph, beams, symbols and noise for one run.

    With ``fixed_scene`` the scene, graph and beams come from run 0 and only
    symbols and noise change between runs.
    """
    srun = 0 if cfg.fixed_scene else run
    model = ChannelModel(cfg.channel_model)
    scene = make_scene(cfg.dims, cfg.L, cfg.M, cfg.N,
                       substream_seed(cfg.master_seed, "scene", srun), cfg.amplitude, model)
    deg = min(cfg.avg_degree, max(cfg.N - 1, 0))
    graph = build_random_network(cfg.N, deg, substream_seed(cfg.master_seed, "graph", srun))
    C = metropolis_weights(graph)
    beams = split_beams(cfg, scene, srun)
    if cfg.beam_source == "optimized":
        beams = optimized_beams(cfg, scene, C, beams, cfg.beta1, srun).beams
    streams = gen_symbols(cfg.T, substream_seed(cfg.master_seed, "symbols", run), cfg.symbols)
    noise = NoiseConfig.from_snr(cfg.snr_db, cfg.P)
    meas = batch_rx(scene, beams, streams, noise, substream_seed(cfg.master_seed, "noise", run))
    mu = step_size(scene, beams.w, cfg.step_factor)
    return RunInstance(scene, C, graph, beams, streams, meas, noise, mu, run,
                       substream_seed(cfg.master_seed, "scene", srun))


def _variant_config(cfg, variant, mu):
    e1, e2 = cfg.eta1, cfg.eta2
    if variant == "no-penalty":
        e1 = e2 = 0.0
    elif variant == "element-only":
        e2 = 0.0
    params = EstimatorParams(mu, e1, e2)
    return TwoStepConfig(
        params, params, varpi2=cfg.varpi2, svd_mode=cfg.svd_mode,
        estimator="centralized" if variant == "centralized" else "distributed",
        step2_warm_start=cfg.warm_start, refit_sensing=cfg.refit_sensing)


def run_variant(inst, cfg, variant):
    """Returns ``(linear network MSD over 0..T, TwoStepResult)``."""
    tcfg = _variant_config(cfg, variant, inst.mu)
    try:
        res = run_two_step(inst.scene, inst.beams, inst.streams, inst.measurements, inst.C,
                           tcfg, step1_only=(variant == "step1-only"))
    except NetIsacError as exc:
        exc.args = (f"run {inst.run} (seed {inst.seed}), variant {variant}: {exc}",)
        raise
    return _network_msd(res.step2, inst.scene.x0), res


def _run_one(args):
    cfg, run = args
    inst = build_instance(cfg, run)
    out = {}
    for v in cfg.variants:
        msd, res = run_variant(inst, cfg, v)
        out[v] = (msd, res.symbol_correlation)
    return run, out


def _map_runs(cfg, runs):
    jobs = [(cfg, r) for r in runs]
    n = min(threads_from_env(), len(jobs))
    if n <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(_run_one, jobs))


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    msd: dict                         # variant -> (runs, T+1) linear
    correlation: dict                 # variant -> (runs,)
    curves: dict = field(default_factory=dict)
    steady: dict = field(default_factory=dict)
    theory: dict = None
    files: dict = field(default_factory=dict)

    def per_run_steady(self, variant):
        cfg = self.config
        return [steady_msd(_to_db(m)[1:], cfg.settle, cfg.window) for m in self.msd[variant]]


def simulate(cfg):
    """All runs and variants in memory; no files written."""
    if cfg.T < cfg.settle:
        raise ConfigError(f"T={cfg.T} shorter than the settle length {cfg.settle}")
    results = sorted(_map_runs(cfg, range(cfg.runs)), key=lambda r: r[0])
    msd = {v: np.array([r[1][v][0] for r in results]) for v in cfg.variants}
    corr = {v: np.array([r[1][v][1] for r in results]) for v in cfg.variants}
    res = ExperimentResult(cfg, msd, corr)
    for v in cfg.variants:
        series = MsdSeries(_to_db(msd[v].mean(axis=0)), msd[v])
        series.steady = steady_msd(series, cfg.settle, cfg.window)
        res.curves[v] = series
        res.steady[v] = series.steady
    return res


# ------------------------------------------------------------------ theory

def predict(cfg, run=0, inst=None, step=2, restrict=True):
    """Theory workspace and MSE prediction for one run's instance."""
    inst = inst or build_instance(cfg, run)
    s2 = sensing_noise_var(cfg, inst.scene, inst.beams, step)
    ws = theory.build_workspace(inst.scene, inst.beams.w, inst.C, effective_steps(inst.mu), s2)
    pred = theory.steady_state_mse(ws, restrict=restrict)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f2 = theory.theory_F2(inst.scene, inst.C, effective_steps(inst.mu), inst.beams.w, s2,
                              tikhonov=cfg.tikhonov)
    params = {"run": run, "step": step, "sigma_in2": s2, "mu": inst.mu,
              "mu_effective": float(effective_steps(inst.mu)), "N": cfg.N, "K": cfg.K,
              "snr_db": cfg.snr_db}
    return ws, pred, theory.theory_report(ws, pred, f2, params)


# ------------------------------------------------------------------ beamforming

@dataclass
class OptimizedBeams:
    beams: BeamformerPair
    report: object


def optimized_beams(cfg, scene, C, ref_beams, beta1, run=0):
    """Beam pair from the DCA design for one instance.

    The step size in the sensing metric is taken from the reference split
    beams, since the metric needs it before the beams exist.
    """
    mu = effective_steps(step_size(scene, ref_beams.w, cfg.step_factor))
    s2 = cfg.sigma_o2 + cfg.varpi2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = theory.f2_model(scene, C, mu, s2, tikhonov=cfg.tikhonov)
    problem = BeamformProblem(scene.channels.g, cfg.sigma_o2, cfg.P, beta1, model, G_count=cfg.G_count)

    def full_mse(w):
        ws = theory.build_workspace(scene, w, C, mu, s2)
        return theory.steady_state_mse(ws, restrict=True).mse

    rep = optimize_beamformers(problem, seed=substream_seed(cfg.master_seed, "randomization", run),
                               full_mse=full_mse)
    return OptimizedBeams(BeamformerPair(rep.w, rep.f), rep)


def beamform(cfg, beta1=None, run=0):
    beta1 = cfg.beta1 if beta1 is None else beta1
    model = ChannelModel(cfg.channel_model)
    scene = make_scene(cfg.dims, cfg.L, cfg.M, cfg.N,
                       substream_seed(cfg.master_seed, "scene", run), cfg.amplitude, model)
    C = metropolis_weights(build_random_network(
        cfg.N, min(cfg.avg_degree, max(cfg.N - 1, 0)), substream_seed(cfg.master_seed, "graph", run)))
    return optimized_beams(cfg, scene, C, split_beams(cfg, scene, run), beta1, run).report


# ------------------------------------------------------------------ output

def curves_csv(res):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "variant", "seed", "msd_db"])
    for v in res.config.variants:
        for r, lin in enumerate(res.msd[v]):
            for i, db in enumerate(_to_db(lin)):
                w.writerow([i, v, r, f"{db:.10f}"])
        for i, db in enumerate(res.curves[v].db):
            w.writerow([i, v, "mean", f"{db:.10f}"])
    return buf.getvalue()


def summary_dict(res):
    out = {
        "config": res.config.to_dict(),
        "steady_msd_db": {v: res.steady[v] for v in res.config.variants},
        "symbol_correlation": {
            v: float(np.nanmean(res.correlation[v])) if np.isfinite(res.correlation[v]).any() else None
            for v in res.config.variants},
    }
    if res.theory is not None:
        out["theory"] = res.theory
    return out


def run_experiment(cfg, output_dir=None, with_theory=True):
    """Simulate, then write ``curves.csv``, ``summary.json`` and run-0 artefacts."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = simulate(cfg)
    inst = build_instance(cfg, 0)
    if with_theory:
        try:
            res.theory = predict(cfg, 0, inst)[2]
        except StabilityError as exc:
            res.theory = {"error": str(exc)}
    files = {
        "curves": out / "curves.csv",
        "summary": out / "summary.json",
        "graph": out / "graph.json",
        "scene": out / "scene.json",
        "measurements": out / "measurements.csv",
        "trajectory": out / "trajectory.csv",
    }
    files["curves"].write_text(curves_csv(res))
    files["summary"].write_text(json.dumps(summary_dict(res), indent=2, sort_keys=True))
    files["graph"].write_text(inst.graph.to_json())
    files["scene"].write_text(inst.scene.to_json())
    inst.measurements.to_csv(files["measurements"])
    _, r0 = run_variant(inst, cfg, cfg.variants[0])
    r0.step2.to_csv(files["trajectory"], inst.scene.x0)
    res.files = {k: str(v) for k, v in files.items()}
    return res


# ------------------------------------------------------------------ sweeps

def dims_for_K(K):
    c = round(K ** (1 / 3))
    if c ** 3 == K:
        return (c, c, c)
    if K % 4 == 0:
        return (2, 2, K // 4)
    raise ConfigError(f"cannot lay out K={K} on a grid; use a cube or a multiple of 4")


def _apply_axis(cfg, axis, value):
    if axis == "L":
        return cfg.replace(L=int(value))
    if axis == "N":
        n = int(value)
        return cfg.replace(N=n, avg_degree=min(cfg.avg_degree, max(n - 1, 1)))
    if axis == "K":
        dims = dims_for_K(int(value))
        K = int(np.prod(dims))
        return cfg.replace(dims=dims, L=max(1, int(round(cfg.l_fraction * K))))
    if axis == "SNR":
        return cfg.replace(snr_db=float(value))
    if axis == "beta1":
        return cfg.replace(beta1=float(value))
    raise ConfigError(f"axis must be one of {SWEEP_AXES}")


def sweep(cfg, axis, values):
    """Rows ``(axis, value, variant, seed, steady_msd_db)``; ``beta1`` rows carry F1/F2."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ConfigError("no sweep values")
    points = [(v, _apply_axis(cfg, axis, v)) for v in values]   # validate all before running
    rows = []
    if axis == "beta1":
        header = ["axis", "value", "variant", "seed", "F1", "F2", "Psi1", "Psi2", "power_used"]
        for v, c in points:
            for r in range(c.runs):
                rep = beamform(c, float(v), r)
                rows.append([axis, v, "beamform", r, rep.F1, rep.F2, rep.Psi1, rep.Psi2, rep.power_used])
        return header, rows
    header = ["axis", "value", "variant", "seed", "steady_msd_db"]
    for v, c in points:
        res = simulate(c)
        for var in c.variants:
            for r, s in enumerate(res.per_run_steady(var)):
                rows.append([axis, v, var, r, s])
            rows.append([axis, v, var, "mean", res.steady[var]])
    return header, rows


def sweep_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{x:.10f}" if isinstance(x, float) else x for x in row])
    return buf.getvalue()
