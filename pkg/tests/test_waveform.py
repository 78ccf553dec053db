import numpy as np
from hypothesis import given, strategies as st

from netisac.scene import make_scene
from netisac.waveform import (BeamformerPair, NoiseConfig, batch_rx, clean_input_row, comm_rx,
                              gen_symbols, sensing_rx)

from conftest import crand


def _setup(seed=0, M=3, N=4):
    rng = np.random.default_rng(seed)
    sc = make_scene((2, 2, 2), 3, M, N, seed)
    beams = BeamformerPair(crand(rng, M), crand(rng, M))
    return rng, sc, beams, gen_symbols(20, seed)


def test_single_slot_unit_modulus():
    s = gen_symbols(1, 0)
    assert np.isclose(abs(s.s_e[0]), 1) and np.isclose(abs(s.s_d[0]), 1)


def test_streams_uncorrelated():
    s = gen_symbols(10_000, 1)
    assert abs(np.mean(s.s_e * np.conj(s.s_d))) < 0.05


def test_symbols_deterministic():
    a, b = gen_symbols(50, 7), gen_symbols(50, 7)
    assert np.array_equal(a.s_e, b.s_e) and np.array_equal(a.s_d, b.s_d)


def test_gaussian_symbols_option():
    s = gen_symbols(20_000, 2, kind="gaussian")
    assert abs(np.mean(np.abs(s.s_e) ** 2) - 1) < 0.05


def test_empty_scene_silent():
    rng, sc, beams, streams = _setup()
    sc0 = make_scene((2, 2, 2), 0, 3, 4, 0)
    assert sensing_rx(sc0, beams, streams, NoiseConfig(), 1, 2, rng) == 0


def test_scalar_reduction():
    sc = make_scene((1, 1, 1), 1, 1, 1, 5)
    w = np.array([0.3 - 0.7j])
    beams = BeamformerPair(w, [0])
    streams = gen_symbols(4, 2)
    y = sensing_rx(sc, beams, streams, NoiseConfig(), 0, 3, None)
    G, h = sc.channels.G[0, 0], sc.channels.h[0, 0]
    assert np.isclose(y, streams.s_e[3] * np.conj(w[0]) * G * h * sc.x0[0], atol=1e-15)


def test_sensing_rx_formula():
    rng, sc, beams, streams = _setup(3)
    G = sc.channels.G
    for n in range(4):
        for i in (0, 7, 19):
            Dh = np.diag(sc.channels.h[n])
            ref = (streams.s_e[i] * beams.w.conj() @ G @ Dh + streams.s_d[i] * beams.f.conj() @ G @ Dh) @ sc.x0
            got = sensing_rx(sc, beams, streams, NoiseConfig(), n, i, rng)
            assert abs(got - ref) < 1e-12


def test_comm_rx_cases():
    rng, sc, beams, streams = _setup(4)
    g = sc.channels.g
    zero = BeamformerPair(np.zeros(3), np.zeros(3))
    assert comm_rx(zero, g, streams, NoiseConfig(), 0, rng) == 0
    perp = np.array([g[1].conj(), -g[0].conj(), 0])
    assert abs(comm_rx(BeamformerPair(perp, 2 * perp), g, streams, NoiseConfig(), 1, rng)) < 1e-14
    ref = g.conj() @ beams.w * streams.s_e[5] + g.conj() @ beams.f * streams.s_d[5]
    assert abs(comm_rx(beams, g, streams, NoiseConfig(), 5, rng) - ref) < 1e-12


def test_clean_row_cases():
    rng, sc, beams, streams = _setup(5)
    G, h = sc.channels.G, sc.channels.h[2]
    assert not np.any(clean_input_row(beams.w, G, h, 0))
    assert not np.any(clean_input_row(beams.w, G, np.zeros(8), 1))
    u = clean_input_row(beams.w, G, h, streams.s_e[0])
    ref = np.diag(h).conj().T @ G.conj().T @ beams.w
    assert abs(np.linalg.norm(u) - np.linalg.norm(ref)) < 1e-12


def test_noiseless_signal_matches_regressor():
    rng, sc, beams, streams = _setup(6)
    beams = BeamformerPair(beams.w, np.zeros(3))
    meas = batch_rx(sc, beams, streams, NoiseConfig(), 0)
    for n in range(4):
        for i in range(streams.T):
            u = clean_input_row(beams.w, sc.channels.G, sc.channels.h[n], streams.s_e[i])
            assert abs(meas.y[n, i] - np.vdot(u, sc.x0)) < 1e-12


def test_batch_matches_pointwise():
    rng, sc, beams, streams = _setup(7)
    meas = batch_rx(sc, beams, streams, NoiseConfig(), 0)
    ref = [[sensing_rx(sc, beams, streams, NoiseConfig(), n, i, None) for i in range(20)] for n in range(4)]
    np.testing.assert_allclose(meas.y, ref, atol=1e-12)


def test_batch_noise_seeded_and_sized():
    rng, sc, beams, streams = _setup(8)
    noise = NoiseConfig.from_snr(10, 10)
    assert np.isclose(noise.sigma_o2, 1.0)
    a = batch_rx(sc, beams, streams, noise, 3)
    b = batch_rx(sc, beams, streams, noise, 3)
    assert np.array_equal(a.y, b.y)
    clean = batch_rx(sc, beams, streams, NoiseConfig(), 3)
    assert not np.array_equal(a.y, clean.y)


def test_empty_horizon():
    _, sc, beams, _ = _setup()
    assert batch_rx(sc, beams, gen_symbols(0, 0), NoiseConfig(1.0), 0).y.shape == (4, 0)


def test_measurement_csv(tmp_path):
    _, sc, beams, streams = _setup()
    meas = batch_rx(sc, beams, streams, NoiseConfig(), 0)
    meas.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "user,time,re,im" and len(lines) == 1 + 4 * 20


@given(seed=st.integers(0, 10**6), scale=st.floats(0.1, 10))
def test_linear_in_scene(seed, scale):
    _, sc, beams, streams = _setup(seed % 50)
    sc2 = type(sc)(type(sc.roi)(sc.x0 * scale, sc.grid), sc.channels)
    y1 = batch_rx(sc, beams, streams, NoiseConfig(), 0).y
    y2 = batch_rx(sc2, beams, streams, NoiseConfig(), 0).y
    np.testing.assert_allclose(y2, scale * y1, rtol=1e-12, atol=1e-12)
