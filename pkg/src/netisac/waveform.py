"""Symbol streams and received-signal synthesis."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .scene import crandn

QPSK = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


@dataclass(frozen=True)
class BeamformerPair:
    w: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex).ravel()
        f = np.asarray(self.f, dtype=complex).ravel()
        if w.shape != f.shape:
            raise ConfigError("w and f must have the same length")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "f", f)

    @property
    def power(self):
        return float(np.vdot(self.w, self.w).real + np.vdot(self.f, self.f).real)

    def to_dict(self):
        return {"w_re": self.w.real.tolist(), "w_im": self.w.imag.tolist(),
                "f_re": self.f.real.tolist(), "f_im": self.f.imag.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["w_re"]) + 1j * np.asarray(d["w_im"]),
                   np.asarray(d["f_re"]) + 1j * np.asarray(d["f_im"]))


@dataclass(frozen=True)
class SymbolStreams:
    s_e: np.ndarray
    s_d: np.ndarray

    @property
    def T(self):
        return self.s_e.size


@dataclass(frozen=True)
class NoiseConfig:
    sigma_o2: float = 0.0
    sigma_in2: float = 0.0

    def __post_init__(self):
        if self.sigma_o2 < 0 or self.sigma_in2 < 0:
            raise ConfigError("noise variances must be nonnegative")

    @classmethod
    def from_snr(cls, snr_db, power, sigma_in2=0.0):
        """``SNR_dB = 10 log10(P / sigma^2)``."""
        return cls(power / 10.0 ** (snr_db / 10.0), sigma_in2)


def gen_symbols(T, seed, kind="qpsk"):
    """Independent sensing and data streams; unit-modulus QPSK by default."""
    if T < 0:
        raise ConfigError("T must be nonnegative")
    rng = np.random.default_rng(seed)
    if kind == "qpsk":
        s_e = QPSK[rng.integers(0, 4, T)]
        s_d = QPSK[rng.integers(0, 4, T)]
    elif kind == "gaussian":
        s_e = crandn(rng, T)
        s_d = crandn(rng, T)
    else:
        raise ConfigError(f"unknown symbol model {kind!r}")
    return SymbolStreams(s_e, s_d)


def beam_rows(b, channels):
    """Rows ``b^H G diag(h_n)`` for every user, shape (N, K)."""
    return (np.conj(b) @ channels.G)[None, :] * channels.h


def clean_input_row(w, G, h_n, s_e_i):
    """``u = (s_e w^H G diag(h_n))^H``, the interference-free regressor."""
    return np.conj(s_e_i * (np.conj(w) @ G) * h_n)


def _noise(rng, sigma_o2, shape=()):
    if sigma_o2 == 0:
        return np.zeros(shape, dtype=complex) if shape else 0j
    return np.sqrt(sigma_o2) * crandn(rng, *shape) if shape else complex(
        np.sqrt(sigma_o2) * crandn(rng, 1)[0])


def sensing_rx(scene, beams, streams, noise, n, i, rng):
    """Echo received by sensing user ``n`` at slot ``i``."""
    G, h = scene.channels.G, scene.channels.h[n]
    row = (streams.s_e[i] * (np.conj(beams.w) @ G)
           + streams.s_d[i] * (np.conj(beams.f) @ G)) * h
    return complex(row @ scene.x0) + _noise(rng, noise.sigma_o2)


def comm_rx(beams, g, streams, noise, i, rng):
    g = np.asarray(g, dtype=complex)
    return (complex(np.vdot(g, beams.w) * streams.s_e[i] + np.vdot(g, beams.f) * streams.s_d[i])
            + _noise(rng, noise.sigma_o2))


@dataclass(frozen=True)
class Measurements:
    """Per-user records ``y`` of shape (N, T)."""

    y: np.ndarray

    @property
    def N(self):
        return self.y.shape[0]

    @property
    def T(self):
        return self.y.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "time", "re", "im"])
            for (n, i), v in np.ndenumerate(self.y):
                w.writerow([n, i, repr(float(v.real)), repr(float(v.imag))])


def batch_rx(scene, beams, streams, noise, seed):
    """All users over the whole horizon; noise i.i.d. over (n, i)."""
    rng = np.random.default_rng(seed)
    r_e = beam_rows(beams.w, scene.channels) @ scene.x0
    r_d = beam_rows(beams.f, scene.channels) @ scene.x0
    y = np.outer(r_e, streams.s_e) + np.outer(r_d, streams.s_d)
    if noise.sigma_o2 > 0 and y.size:
        y = y + np.sqrt(noise.sigma_o2) * crandn(rng, *y.shape)
    return Measurements(y)
