"""Wavelength grids, sensor-style channel subsets and synthetic hyperspectral cubes."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

VNIR_SWIR_THRESHOLD_NM = 1000.0

CONFIG_KINDS = ("C120_VNIR+", "C120_SWIR+", "C82_disjoint", "C202_full")
CONFIG_SIZES = {"C120_VNIR+": 120, "C120_SWIR+": 120, "C82_disjoint": 82, "C202_full": 202}


@dataclass(frozen=True)
class WavelengthGrid:
    wavelengths: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if wl.ndim != 1 or wl.size == 0:
            raise ConfigError("wavelength grid must be a non-empty 1-D array")
        if np.any(np.diff(wl) <= 0):
            raise ConfigError("wavelengths must be strictly increasing")
        object.__setattr__(self, "wavelengths", wl)

    @property
    def vnir_count(self) -> int:
        return int(np.sum(self.wavelengths < VNIR_SWIR_THRESHOLD_NM))

    @property
    def swir_count(self) -> int:
        return len(self) - self.vnir_count

    def __len__(self):
        return self.wavelengths.size


@dataclass(frozen=True)
class ChannelConfig:
    name: str
    indices: np.ndarray
    wavelengths: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size and np.any(np.diff(idx) <= 0):
            raise ConfigError("channel indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "wavelengths", np.asarray(self.wavelengths, dtype=np.float64))
        expected = CONFIG_SIZES.get(self.name)
        if expected is not None and idx.size != expected:
            raise ConfigError(f"{self.name} must have {expected} channels, got {idx.size}")

    def __len__(self):
        return int(self.indices.size)


@dataclass
class HyperCube:
    values: np.ndarray  # (C, H, W)
    wavelengths: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] != len(self.wavelengths):
            raise ConfigError(
                f"cube of shape {self.values.shape} does not match {len(self.wavelengths)} wavelengths"
            )

    @property
    def shape(self):
        return self.values.shape

    def select(self, positions) -> "HyperCube":
        """Keep the channels at the given positions of this cube."""
        positions = np.asarray(positions, dtype=np.int64)
        return HyperCube(self.values[positions], self.wavelengths[positions], self.seed, dict(self.meta))


def make_reference_grid() -> WavelengthGrid:
    """Synthetic 202-band grid: 100 VNIR bands in [420, 995] nm, 102 SWIR in [1005, 2445] nm."""
    return WavelengthGrid(np.concatenate([np.linspace(420.0, 995.0, 100), np.linspace(1005.0, 2445.0, 102)]))


def even_indices(m: int, k: int) -> np.ndarray:
    """k evenly spaced indices out of range(m): round(j*(m-1)/(k-1))."""
    if not 0 <= k <= m:
        raise ConfigError(f"cannot pick {k} of {m}")
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    if k == 1:
        return np.zeros(1, dtype=np.int64)
    j = np.arange(k)
    # floor(x + 0.5) rather than np.round so halves go up deterministically
    return np.floor(j * (m - 1) / (k - 1) + 0.5).astype(np.int64)


def _split_select(grid: WavelengthGrid, n_vnir: int, n_swir: int) -> np.ndarray:
    v = grid.vnir_count
    vnir = even_indices(v, n_vnir)
    swir = v + even_indices(grid.swir_count, n_swir)
    return np.concatenate([vnir, swir])


def make_config(grid: WavelengthGrid, kind: str) -> ChannelConfig:
    if kind == "C120_VNIR+":
        idx = _split_select(grid, 80, 40)
    elif kind == "C120_SWIR+":
        idx = _split_select(grid, 40, 80)
    elif kind == "C202_full":
        idx = np.arange(len(grid))
    elif kind == "C82_disjoint":
        return complement_config(grid, make_config(grid, "C120_VNIR+"), name="C82_disjoint")
    else:
        raise ConfigError(f"unknown channel configuration {kind!r}")
    return ChannelConfig(kind, idx, grid.wavelengths[idx])


def custom_config(grid: WavelengthGrid, indices) -> ChannelConfig:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(grid)):
        raise ConfigError("channel index out of grid bounds")
    return ChannelConfig("custom", idx, grid.wavelengths[idx])


def complement_config(grid: WavelengthGrid, base: ChannelConfig, name: str = "custom") -> ChannelConfig:
    if base.indices.size and (base.indices.min() < 0 or base.indices.max() >= len(grid)):
        raise ConfigError("base configuration has indices outside the grid")
    keep = np.ones(len(grid), dtype=bool)
    keep[base.indices] = False
    idx = np.flatnonzero(keep)
    return ChannelConfig(name, idx, grid.wavelengths[idx])


def synth_cube(
    wavelengths, H: int, W: int, seed: int, n_blobs: int = 6, noise: float = 0.01, width_range=(0.3, 0.8)
) -> HyperCube:
    """Smooth spatial blobs, each with a Gaussian spectral signature, plus noise.

    Blob parameters depend only on ``seed`` and the noise for a channel only on
    ``(seed, wavelength)``, so generating on a channel subset equals slicing the
    full-grid cube. Each channel is standardized to zero mean, unit variance.
    """
    wl = np.asarray(wavelengths, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centers = rng.uniform([0, 0], [H, W], size=(n_blobs, 2))
    widths = rng.uniform(*width_range, size=(n_blobs, 2)) * min(H, W)
    amps = rng.uniform(0.5, 1.5, size=n_blobs) * rng.choice([-1.0, 1.0], size=n_blobs)
    peaks = rng.uniform(420.0, 2445.0, size=n_blobs)
    spreads = rng.uniform(150.0, 600.0, size=n_blobs)

    yy, xx = np.meshgrid(np.arange(H) + 0.5, np.arange(W) + 0.5, indexing="ij")
    spatial = np.exp(
        -0.5 * (((yy[None] - centers[:, 0, None, None]) / widths[:, 0, None, None]) ** 2
                + ((xx[None] - centers[:, 1, None, None]) / widths[:, 1, None, None]) ** 2)
    )  # (K, H, W)
    signature = amps[:, None] * np.exp(-0.5 * ((wl[None, :] - peaks[:, None]) / spreads[:, None]) ** 2)  # (K, C)
    values = np.einsum("kc,khw->chw", signature, spatial)
    # 0.1 pm steps keep distinct bands on distinct noise streams
    for c, lam in enumerate(wl):
        values[c] += noise * np.random.default_rng([seed, int(round(lam * 1e4))]).standard_normal((H, W))
    values -= values.mean(axis=(1, 2), keepdims=True)
    values /= values.std(axis=(1, 2), keepdims=True) + 1e-12
    return HyperCube(values, wl.copy(), seed)


def format_config(cfg: ChannelConfig) -> str:
    lines = [f"{cfg.name},{len(cfg)}"]
    # repr() of a float round-trips exactly
    lines += [f"{int(i)},{float(w)!r}" for i, w in zip(cfg.indices, cfg.wavelengths)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ChannelConfig:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ConfigError("empty configuration file")
    name, count = rows[0].rsplit(",", 1)
    body = [r.split(",") for r in rows[1:]]
    if len(body) != int(count):
        raise ConfigError(f"header declares {count} channels, found {len(body)}")
    idx = [int(i) for i, _ in body]
    wl = [float(w) for _, w in body]
    return ChannelConfig(name, np.array(idx, dtype=np.int64), np.array(wl, dtype=np.float64))


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_config(cfg: ChannelConfig, path) -> None:
    atomic_write_text(path, format_config(cfg))


def load_config(path) -> ChannelConfig:
    with open(path) as fh:
        return parse_config(fh.read())
