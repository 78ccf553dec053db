import csv
import io
import json
import inspect

import numpy as np
import pytest
from hypothesis import given, strategies as st

from netisac import harness
from netisac.errors import ConfigError, ProtocolError
from netisac.harness import (ExperimentConfig, MsdSeries, build_instance, dims_for_K, msd_curve,
                             run_experiment, simulate, split_beams, steady_msd, substream_seed,
                             sweep, sweep_csv, threads_from_env)
from netisac.sensing import Trajectory

from conftest import crand


def small(**kw):
    base = dict(dims=(2, 2, 1), M=2, N=3, avg_degree=2, T=80, L=1, runs=2,
                settle=60, window=20, G_count=5)
    base.update(kw)
    return ExperimentConfig(**base)


# ------------------------------------------------------------------ seeds, env

def test_substreams_distinct_and_stable():
    keys = [(p, r, u) for p in ("scene", "noise") for r in range(3) for u in range(2)]
    seeds = [substream_seed(7, *k) for k in keys]
    assert len(set(seeds)) == len(seeds)
    assert seeds == [substream_seed(7, *k) for k in keys]
    assert substream_seed(7, "scene") != substream_seed(8, "scene")


def test_threads_env(monkeypatch):
    monkeypatch.delenv("NETISAC_THREADS", raising=False)
    assert threads_from_env(3) == 3
    monkeypatch.setenv("NETISAC_THREADS", "4")
    assert threads_from_env() == 4
    for bad in ("0", "many"):
        monkeypatch.setenv("NETISAC_THREADS", bad)
        with pytest.raises(ConfigError):
            threads_from_env()


# ------------------------------------------------------------------ config

@pytest.mark.parametrize("kw", [
    dict(N=0), dict(T=0), dict(runs=0), dict(snr_db=float("inf")), dict(P=0.0),
    dict(L=9), dict(variants=()), dict(variants=("two-step", "magic")),
    dict(dims=(2, 2)), dict(window=700), dict(avg_degree=10), dict(beam_source="psychic"),
])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_config_defaults_are_desk_scale():
    cfg = ExperimentConfig()
    assert (cfg.K, cfg.N, cfg.M, cfg.T, cfg.runs, cfg.snr_db) == (8, 5, 4, 600, 20, 10.0)
    assert np.isclose(cfg.sigma_o2, 1.0)


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = small(variants=("two-step", "centralized"))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"N": 3, "colour": "red"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict([1, 2])
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


# ------------------------------------------------------------------ metrics

def test_msd_exact_recovery_hits_floor(rng):
    x0 = crand(rng, 5)
    traj = Trajectory(np.tile(x0, (11, 4, 1)))
    assert np.all(msd_curve(traj, x0).db == harness.FLOOR_DB)


def test_msd_zero_estimates_unit_target_is_zero_db(rng):
    x0 = crand(rng, 6)
    x0 /= np.linalg.norm(x0)
    for N in (1, 3, 7):
        series = msd_curve(Trajectory(np.zeros((5, N, 6), complex)), x0)
        np.testing.assert_allclose(series.db, 0.0, atol=1e-12)


def test_msd_matches_direct_formula(rng):
    runs, T, N, K = 3, 12, 4, 5
    trajs = [Trajectory(crand(rng, T + 1, N, K)) for _ in range(runs)]
    x0s = [crand(rng, K) for _ in range(runs)]
    series = msd_curve(trajs, x0s)
    lin = np.zeros(T + 1)
    for t, x in zip(trajs, x0s):
        for i in range(T + 1):
            lin[i] += np.mean([np.linalg.norm(x - t.estimates[i, k]) ** 2 for k in range(N)]) / runs
    assert np.max(np.abs(series.db - 10 * np.log10(lin))) < 1e-10
    assert series.per_run.shape == (runs, T + 1)


def test_steady_msd_cases():
    assert steady_msd(np.full(700, -20.0)) == -20.0
    sig = inspect.signature(steady_msd).parameters
    assert sig["settle"].default == 600 and sig["window"].default == 150
    vals = np.arange(40.0)
    assert steady_msd(vals, settle=40, window=40) == vals.mean()
    assert steady_msd(vals, settle=10, window=3) == np.mean([7.0, 8.0, 9.0])


def test_steady_msd_on_series_skips_initial_state():
    db = np.concatenate([[99.0], np.full(30, -5.0)])
    assert steady_msd(MsdSeries(db), settle=30, window=10) == -5.0


def test_steady_msd_protocol_errors():
    with pytest.raises(ProtocolError):
        steady_msd(np.zeros(100))
    with pytest.raises(ProtocolError):
        steady_msd(np.zeros(100), settle=50, window=60)


@given(level=st.floats(-200, 50), n=st.integers(20, 200))
def test_steady_msd_constant(level, n):
    assert np.isclose(steady_msd(np.full(n, level), settle=n, window=min(n, 15)), level)


# ------------------------------------------------------------------ instances

def test_split_beams_use_full_budget():
    cfg = small(P=7.0, sensing_fraction=0.6)
    inst = build_instance(cfg, 0)
    b = split_beams(cfg, inst.scene, 0)
    assert np.isclose(np.linalg.norm(b.w) ** 2, 4.2) and np.isclose(np.linalg.norm(b.f) ** 2, 2.8)


def test_instances_deterministic_and_distinct():
    cfg = small()
    a, b, c = build_instance(cfg, 0), build_instance(cfg, 0), build_instance(cfg, 1)
    assert np.array_equal(a.measurements.y, b.measurements.y)
    assert np.array_equal(a.C, b.C) and a.mu == b.mu
    assert not np.array_equal(a.scene.x0, c.scene.x0)


def test_fixed_scene_shares_geometry_only():
    cfg = small(fixed_scene=True)
    a, b = build_instance(cfg, 0), build_instance(cfg, 1)
    assert np.array_equal(a.scene.x0, b.scene.x0) and np.array_equal(a.C, b.C)
    assert not np.array_equal(a.streams.s_e, b.streams.s_e)


def test_step_size_scales_with_factor():
    a = build_instance(small(step_factor=1.0), 0)
    b = build_instance(small(step_factor=0.25), 0)
    assert np.isclose(b.mu, 0.25 * a.mu)


def test_adding_a_variant_leaves_others_unchanged():
    one = simulate(small(variants=("no-penalty",)))
    two = simulate(small(variants=("two-step", "no-penalty")))
    np.testing.assert_array_equal(one.msd["no-penalty"], two.msd["no-penalty"])


def test_simulate_needs_settle_horizon():
    with pytest.raises(ConfigError):
        simulate(small(T=50))


# ------------------------------------------------------------------ experiment files

def test_run_experiment_writes_all_variants(tmp_path):
    res = run_experiment(small(), tmp_path)
    rows = list(csv.DictReader(open(res.files["curves"])))
    assert set(rows[0]) == {"iteration", "variant", "seed", "msd_db"}
    assert {r["variant"] for r in rows} == set(harness.VARIANTS)
    assert {r["seed"] for r in rows} == {"0", "1", "mean"}
    assert all(np.isfinite(float(r["msd_db"])) for r in rows)
    summary = json.loads(open(res.files["summary"]).read())
    assert set(summary["steady_msd_db"]) == set(harness.VARIANTS)
    assert "mse_predicted" in summary["theory"] or "error" in summary["theory"]
    for key in ("graph", "scene", "measurements", "trajectory"):
        assert (tmp_path / res.files[key].split("/")[-1]).exists()


def test_run_experiment_byte_identical(tmp_path):
    cfg = small(variants=("two-step", "centralized"))
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    for key in ("curves", "summary", "trajectory", "measurements"):
        assert open(a.files[key], "rb").read() == open(b.files[key], "rb").read()


def test_parallel_matches_serial(monkeypatch):
    cfg = small(variants=("two-step",))
    monkeypatch.setenv("NETISAC_THREADS", "1")
    serial = simulate(cfg)
    monkeypatch.setenv("NETISAC_THREADS", "2")
    par = simulate(cfg)
    np.testing.assert_array_equal(serial.msd["two-step"], par.msd["two-step"])


# ------------------------------------------------------------------ sweeps

def test_sweep_rows_carry_axis_variant_seed():
    header, rows = sweep(small(variants=("two-step", "no-penalty")), "L", [1, 2])
    assert header == ["axis", "value", "variant", "seed", "steady_msd_db"]
    assert len(rows) == 2 * 2 * 3
    assert {(r[1], r[2]) for r in rows} == {(v, m) for v in (1, 2) for m in ("two-step", "no-penalty")}
    body = list(csv.reader(io.StringIO(sweep_csv(header, rows))))
    assert body[0] == header and len(body) == 1 + len(rows)


def test_sweep_beta_reports_beamform_metrics():
    header, rows = sweep(small(runs=1), "beta1", [0.2, 0.8])
    assert header[4:6] == ["F1", "F2"]
    assert [r[1] for r in rows] == [0.2, 0.8]


def test_sweep_validates_before_running():
    with pytest.raises(ConfigError):
        sweep(small(), "L", [1, 99])
    with pytest.raises(ConfigError):
        sweep(small(), "colour", [1])
    with pytest.raises(ConfigError):
        sweep(small(), "N", [])


def test_dims_for_K():
    assert dims_for_K(8) == (2, 2, 2)
    assert dims_for_K(64) == (4, 4, 4)
    assert dims_for_K(16) == (2, 2, 4)
    with pytest.raises(ConfigError):
        dims_for_K(7)
