import numpy as np
import pytest
from hypothesis import given, strategies as st

from netisac.errors import ConfigError, DegenerateEstimateError
from netisac.scene import make_scene
from netisac.sensing import EstimatorParams
from netisac.topology import build_random_network, metropolis_weights
from netisac.two_step import (TwoStepConfig, estimate_data_symbols, observable_regressors,
                              project_out, rank_one_left_vector, residual_signal, residuals,
                              run_two_step, step1_inputs, step2_inputs, symbol_correlation)
from netisac.waveform import BeamformerPair, NoiseConfig, batch_rx, clean_input_row, gen_symbols

from conftest import crand


def instance(seed=0, f_zero=False, sigma_o2=0.0, T=64, N=4):
    rng = np.random.default_rng(seed)
    sc = make_scene((2, 2, 2), 2, 3, N, seed)
    f = np.zeros(3) if f_zero else crand(rng, 3)
    beams = BeamformerPair(2 * crand(rng, 3), f)
    streams = gen_symbols(T, seed)
    meas = batch_rx(sc, beams, streams, NoiseConfig(sigma_o2), seed)
    return sc, beams, streams, meas


def data_row(sc, beams, n):
    return (beams.f.conj() @ sc.channels.G) * sc.channels.h[n]


def test_step1_without_interference_is_clean_row():
    sc, beams, streams, meas = instance(f_zero=True)
    y, u = step1_inputs(sc, beams, streams, meas, 2, 5, include_interference=True)
    np.testing.assert_allclose(u, clean_input_row(beams.w, sc.channels.G, sc.channels.h[2], streams.s_e[5]))
    assert y == meas.y[2, 5]


def test_step1_zero_symbols():
    sc, beams, streams, meas = instance()
    zero = type(streams)(np.zeros(streams.T, complex), np.zeros(streams.T, complex))
    _, u = step1_inputs(sc, beams, zero, meas, 0, 0, include_interference=True)
    assert not np.any(u)


def test_step1_formula():
    sc, beams, streams, meas = instance(1)
    G = sc.channels.G
    for n, i in [(0, 0), (3, 17), (1, 63)]:
        D = np.diag(sc.channels.h[n])
        ref = (streams.s_e[i] * beams.w.conj() @ G @ D + streams.s_d[i] * beams.f.conj() @ G @ D).conj()
        _, u = step1_inputs(sc, beams, streams, meas, n, i, include_interference=True)
        assert np.max(np.abs(u - ref)) < 1e-12
        # the regressor users can form leaves the data term in y
        _, u_obs = step1_inputs(sc, beams, streams, meas, n, i)
        assert abs(meas.y[n, i] - np.vdot(u_obs, sc.x0) - streams.s_d[i] * data_row(sc, beams, n) @ sc.x0) < 1e-12


def test_residual_with_perfect_estimate_is_data_term():
    sc, beams, streams, meas = instance(2)
    for n in range(4):
        r = residual_signal(meas.y[n], sc, beams, streams, sc.x0, n)
        np.testing.assert_allclose(r, streams.s_d * (data_row(sc, beams, n) @ sc.x0), atol=1e-12)


def test_residual_zero_inputs():
    sc, beams, streams, _ = instance()
    assert not np.any(residual_signal(np.zeros(64), sc, beams, streams, np.zeros(8), 0))


def test_residual_formula_and_batch(rng):
    sc, beams, streams, meas = instance(3, sigma_o2=0.5)
    x_hat = crand(rng, 8)
    batch = residuals(sc, beams, streams, meas, x_hat)
    for n in range(4):
        ref = meas.y[n] - streams.s_e * (beams.w.conj() @ sc.channels.G @ np.diag(sc.channels.h[n]) @ x_hat)
        assert np.max(np.abs(residual_signal(meas.y[n], sc, beams, streams, x_hat, n) - ref)) < 1e-12
        assert np.max(np.abs(batch[n] - ref)) < 1e-12


@pytest.mark.parametrize("mode", ["network", "per_user", "average"])
def test_exact_rank_one_residual(mode, rng):
    s_d = gen_symbols(100, 4).s_d
    res = np.outer(crand(rng, 5), s_d)
    est = estimate_data_symbols(res, mode)
    assert est.correlation(s_d) > 1 - 1e-12
    assert np.isclose(np.linalg.norm(est.s_hat_d), 1)
    np.testing.assert_allclose(est.scale[:, None] * est.directions, res, atol=1e-12)


def test_basis_vector_residual():
    e1 = np.zeros(10)
    e1[0] = 1
    est = estimate_data_symbols(e1[None, :])
    assert np.isclose(abs(est.s_hat_d[0]), 1) and np.allclose(est.s_hat_d[1:], 0)


def test_noisy_residual_correlation(rng):
    # 10 dB per sample on every user
    corr = []
    for _ in range(20):
        s_d = gen_symbols(600, int(rng.integers(1 << 30))).s_d
        res = np.outer(crand(rng, 5), s_d)
        res += np.sqrt(0.1 * np.mean(np.abs(res) ** 2)) * crand(rng, *res.shape)
        corr.append(estimate_data_symbols(res).correlation(s_d))
    assert np.mean(corr) > 0.99


def test_all_zero_residuals_rejected():
    with pytest.raises(DegenerateEstimateError):
        estimate_data_symbols(np.zeros((3, 8)))
    with pytest.raises(DegenerateEstimateError):
        rank_one_left_vector(np.ones(4), z=np.zeros(4))


@given(seed=st.integers(0, 10**6))
def test_direction_independent_of_z(seed):
    rng = np.random.default_rng(seed)
    y = crand(rng, 12)
    ref = np.linalg.svd(np.outer(y, crand(rng, 12).conj()))[0][:, 0]
    got = rank_one_left_vector(y, crand(rng, 12))
    assert abs(abs(np.vdot(ref, got)) - 1) < 1e-10
    assert np.isclose(np.linalg.norm(got), 1)


def test_project_out_removes_sensing_component(rng):
    s_e = gen_symbols(50, 0).s_e
    res = crand(rng, 3, 50)
    out = project_out(res + np.outer([1, 2j, -1], s_e), s_e)
    np.testing.assert_allclose(out @ s_e.conj(), 0, atol=1e-12)


def perfect_estimate(sc, beams, streams, meas):
    res = residuals(sc, beams, streams, meas, sc.x0)
    return estimate_data_symbols(res)


def test_step2_perfect_cancellation():
    sc, beams, streams, meas = instance(5)
    est = perfect_estimate(sc, beams, streams, meas)
    for n in range(4):
        for i in (0, 31, 63):
            y_t, u2 = step2_inputs(sc, beams, streams, meas, sc.x0, est, n, i)
            assert abs(y_t - np.vdot(u2, sc.x0)) < 1e-12


def test_step2_without_data_beam_keeps_y():
    sc, beams, streams, meas = instance(6, f_zero=True, sigma_o2=0.3)
    est = estimate_data_symbols(residuals(sc, beams, streams, meas, np.zeros(8)))
    y_t, _ = step2_inputs(sc, beams, streams, meas, np.zeros(8), est, 1, 3)
    assert y_t == meas.y[1, 3]


def test_step2_formula(rng):
    sc, beams, streams, meas = instance(7, sigma_o2=0.2)
    est = estimate_data_symbols(residuals(sc, beams, streams, meas, crand(rng, 8)))
    for n, i in [(0, 1), (2, 40)]:
        y_t, u2 = step2_inputs(sc, beams, streams, meas, None, est, n, i)
        assert abs(y_t - (meas.y[n, i] - est.scale[n] * est.directions[n, i])) < 1e-12
        ref_u = clean_input_row(beams.w, sc.channels.G, sc.channels.h[n], streams.s_e[i])
        assert np.max(np.abs(u2 - ref_u)) < 1e-12


@given(seed=st.integers(0, 500))
def test_exact_estimates_give_consistent_step2(seed):
    sc, beams, streams, meas = instance(seed, T=24, N=3)
    est = perfect_estimate(sc, beams, streams, meas)
    y = meas.y - est.scale[:, None] * est.directions
    U = observable_regressors(sc, beams, streams)
    np.testing.assert_allclose(y, np.einsum("ntk,k->nt", U.conj(), sc.x0), atol=1e-11)


def pipeline(seed=0, f_zero=False, warm=False, T=300):
    sc, beams, streams, meas = instance(seed, f_zero=f_zero, sigma_o2=0.1, T=T, N=5)
    C = metropolis_weights(build_random_network(5, 2, seed))
    p = EstimatorParams(0.01, 0.01, 0.01)
    cfg = TwoStepConfig(p, p, step2_warm_start=warm, keep_symbols=True)
    return sc, run_two_step(sc, beams, streams, meas, C, cfg)


def test_pipeline_without_data_beam_repeats_step1():
    _, res = pipeline(f_zero=True)
    np.testing.assert_array_equal(res.step1.estimates, res.step2.estimates)


def test_pipeline_deterministic():
    _, a = pipeline(3, warm=True)
    _, b = pipeline(3, warm=True)
    np.testing.assert_array_equal(a.step2.estimates, b.step2.estimates)
    assert a.symbol_correlation == b.symbol_correlation
    assert a.symbols is not None and 0 < a.symbol_correlation <= 1


def test_config_validation():
    p = EstimatorParams(0.1)
    with pytest.raises(ConfigError):
        TwoStepConfig(p, p, varpi2=-1)
    with pytest.raises(ConfigError):
        TwoStepConfig(p, p, svd_mode="median")


def test_symbol_correlation_zero_vector():
    assert symbol_correlation(np.zeros(3), np.ones(3)) == 0.0
