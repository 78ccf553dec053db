"""Region-of-interest grid, block-sparse scattering vector and channels."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

CARRIER_HZ = 28e9
SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RoiGrid:
    dims: tuple
    room_size: tuple = (4.0, 4.0, 4.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"dims must be three positive integers, got {self.dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "room_size", tuple(float(s) for s in self.room_size))

    @property
    def K(self):
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def block_len(self):
        return self.dims[0]

    @property
    def n_blocks(self):
        return self.dims[1] * self.dims[2]

    def pixel_centers(self):
        """Pixel centres in metres, first axis varying fastest."""
        axes = [(np.arange(d) + 0.5) * (s / d) for d, s in zip(self.dims, self.room_size)]
        c1, c2, c3 = np.meshgrid(*axes, indexing="ij")
        return np.stack([c1.ravel(order="F"), c2.ravel(order="F"), c3.ravel(order="F")], axis=1)


@dataclass(frozen=True)
class RoiVector:
    """Scattering amplitudes stored as complex with zero imaginary part."""

    x: np.ndarray
    grid: RoiGrid

    def __post_init__(self):
        x = np.asarray(self.x, dtype=complex).ravel().copy()
        if x.size != self.grid.K:
            raise ConfigError(f"x has length {x.size}, grid has K={self.grid.K}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def K(self):
        return self.grid.K

    @property
    def support(self):
        return np.flatnonzero(self.x != 0)

    @property
    def L(self):
        return int(np.count_nonzero(self.x))

    def blocks(self):
        return block_partition(self)

    def l21_norm(self):
        return l21_norm(self.x, self.grid)


def build_roi(dims, support, amplitudes, room_size=(4.0, 4.0, 4.0)):
    grid = dims if isinstance(dims, RoiGrid) else RoiGrid(tuple(dims), room_size)
    support = np.asarray(list(support), dtype=int).ravel()
    amplitudes = np.asarray(list(amplitudes), dtype=float).ravel()
    if support.size != amplitudes.size:
        raise ConfigError("support and amplitudes differ in length")
    if support.size and (support.min() < 0 or support.max() >= grid.K):
        raise ConfigError(f"support index out of range [0, {grid.K})")
    if np.any(amplitudes < 0):
        raise ConfigError("scattering amplitudes must be nonnegative")
    if np.unique(support).size != support.size:
        raise ConfigError("duplicate support index")
    x = np.zeros(grid.K, dtype=complex)
    x[support] = amplitudes
    return RoiVector(x, grid)


def contiguous_support(grid, L, rng):
    """``L`` consecutive pixel indices starting at a block boundary."""
    if not 0 <= L <= grid.K:
        raise ConfigError(f"L must lie in [0, {grid.K}]")
    if L == 0:
        return np.array([], dtype=int)
    starts = np.arange(0, grid.K - L + 1, grid.block_len)
    if starts.size == 0:
        starts = np.array([0])
    start = int(rng.choice(starts))
    return np.arange(start, start + L)


def block_partition(x, grid=None):
    """Split into ``K2*K3`` consecutive blocks of length ``K1`` (rows of the result)."""
    if isinstance(x, RoiVector):
        grid, x = x.grid, x.x
    x = np.asarray(x)
    return x.reshape(grid.n_blocks, grid.block_len)


def l21_norm(x, grid):
    return float(np.sum(np.linalg.norm(block_partition(x, grid), axis=1)))


@dataclass(frozen=True)
class ChannelSet:
    """``G`` (M, K) BS->ROI, ``h`` (N, K) ROI->user rows, ``g`` (M,) BS->comm user."""

    G: np.ndarray
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=complex)
        h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        g = np.asarray(self.g, dtype=complex).ravel()
        if G.ndim != 2 or h.shape[1] != G.shape[1] or g.size != G.shape[0]:
            raise ConfigError(f"inconsistent channel shapes G{G.shape} h{h.shape} g{g.shape}")
        for name, arr in (("G", G), ("h", h), ("g", g)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"channel {name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)

    @property
    def M(self):
        return self.G.shape[0]

    @property
    def K(self):
        return self.G.shape[1]

    @property
    def N(self):
        return self.h.shape[0]

    def subset(self, users):
        return ChannelSet(self.G, self.h[np.asarray(users)], self.g)


@dataclass(frozen=True)
class ChannelModel:
    """``kind`` is ``"rayleigh"`` (i.i.d. CN(0,1)) or ``"steering"`` (ULA + spherical wavefronts)."""

    kind: str = "rayleigh"
    path_loss: tuple = None

    def __post_init__(self):
        if self.kind not in ("rayleigh", "steering"):
            raise ConfigError(f"unknown channel model {self.kind!r}")
        if self.path_loss is not None:
            object.__setattr__(self, "path_loss", tuple(float(p) for p in self.path_loss))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(M, grid, N, model=None, seed=0):
    if M < 1 or N < 1:
        raise ConfigError("M and N must be positive")
    model = model or ChannelModel()
    rng = np.random.default_rng(seed)
    if model.kind == "rayleigh":
        G = crandn(rng, M, grid.K)
        h = crandn(rng, N, grid.K)
        g = crandn(rng, M)
    else:
        G, h, g = _steering_channels(M, grid, N, rng)
    if model.path_loss is not None:
        if len(model.path_loss) != N:
            raise ConfigError("path_loss needs one factor per user")
        h = h * np.asarray(model.path_loss)[:, None]
    return ChannelSet(G, h, g)


def _steering_channels(M, grid, N, rng):
    lam = SPEED_OF_LIGHT / CARRIER_HZ
    room = np.asarray(grid.room_size)
    pixels = grid.pixel_centers()
    # BS half-wavelength ULA along the x-axis, 10 m from the room centre
    bs = room / 2 + np.array([0.0, -10.0, 0.0])
    ant = bs + np.outer(np.arange(M) - (M - 1) / 2, [lam / 2, 0.0, 0.0])
    d_bs = np.linalg.norm(ant[:, None, :] - pixels[None, :, :], axis=2)
    G = np.exp(-2j * np.pi * d_bs / lam) * (np.mean(d_bs) / d_bs)
    users = room / 2 + rng.uniform(-1.0, 1.0, size=(N, 3)) * (room / 2 + 1.0)
    d_u = np.linalg.norm(users[:, None, :] - pixels[None, :, :], axis=2)
    h = np.exp(-2j * np.pi * d_u / lam) * (np.mean(d_u) / d_u)
    comm = bs + np.array([30.0, 30.0, 0.0]) * rng.uniform(0.5, 1.0)
    d_c = np.linalg.norm(ant - comm, axis=1)
    g = np.exp(-2j * np.pi * d_c / lam)
    return G, h, g


@dataclass(frozen=True)
class Scene:
    """Ground-truth scene plus the channels that illuminate it."""

    roi: RoiVector
    channels: ChannelSet
    channel_seed: int = 0
    model: ChannelModel = field(default_factory=ChannelModel)

    @property
    def grid(self):
        return self.roi.grid

    @property
    def x0(self):
        return self.roi.x

    @property
    def M(self):
        return self.channels.M

    @property
    def N(self):
        return self.channels.N

    @property
    def K(self):
        return self.roi.K

    def to_dict(self):
        supp = self.roi.support
        return {
            "dims": list(self.grid.dims),
            "room_size": list(self.grid.room_size),
            "support": [int(k) for k in supp],
            "amplitudes": [float(self.x0[k].real) for k in supp],
            "M": self.M,
            "N": self.N,
            "channel_seed": int(self.channel_seed),
            "channel_model": self.model.kind,
            "path_loss": list(self.model.path_loss) if self.model.path_loss else None,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        roi = build_roi(data["dims"], data["support"], data["amplitudes"],
                        data.get("room_size", (4.0, 4.0, 4.0)))
        model = ChannelModel(data.get("channel_model", "rayleigh"), data.get("path_loss"))
        channels = generate_channels(int(data["M"]), roi.grid, int(data["N"]), model,
                                     int(data["channel_seed"]))
        return cls(roi, channels, int(data["channel_seed"]), model)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def dump_channels(self, path):
        """Debug dump: one CSV row per channel entry as (name, row, col, re, im)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "row", "col", "re", "im"])
            for name, arr in (("G", self.channels.G), ("h", self.channels.h),
                              ("g", self.channels.g[:, None])):
                for (r, c), v in np.ndenumerate(arr):
                    w.writerow([name, r, c, repr(float(v.real)), repr(float(v.imag))])


def make_scene(dims, L, M, N, seed, amplitude=1.0, model=None, room_size=(4.0, 4.0, 4.0)):
    """Scene with ``L`` contiguous unit-amplitude pixels and fresh channels."""
    grid = RoiGrid(tuple(dims), room_size)
    rng = np.random.default_rng(seed)
    support = contiguous_support(grid, L, rng)
    roi = build_roi(grid, support, np.full(support.size, amplitude))
    model = model or ChannelModel()
    chan_seed = int(rng.integers(2**31))
    return Scene(roi, generate_channels(M, grid, N, model, chan_seed), chan_seed, model)
