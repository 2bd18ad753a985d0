"""Rotary position embedding over patch coordinates and physical wavelength.

The spatial branch splits its per-head width in half: the first half rotates
with the row coordinate u, the second with the column coordinate v. The
spectral branch rotates with the band's central wavelength. Row/column 0 of
a grid is a CLS slot and is never rotated.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import DimensionError, Tensor, rotate_pairs as _rotate


@dataclass(frozen=True)
class RopeConfig:
    d_s: int = 8
    d_c: int = 2
    base_spatial: float = 10000.0
    base_spectral: float = 100.0
    lambda_unit: float = 1e-3  # nm -> um

    def __post_init__(self):
        if self.d_s % 4:
            raise DimensionError(f"spatial rotary width must be divisible by 4, got {self.d_s}")
        if self.d_c % 2:
            raise DimensionError(f"spectral rotary width must be even, got {self.d_c}")
        if self.base_spatial <= 1 or self.base_spectral <= 1:
            raise ValueError("rotary bases must exceed 1")

    def for_widths(self, d_s: int, d_c: int) -> "RopeConfig":
        return replace(self, d_s=d_s, d_c=d_c)


def inv_frequencies(n_pairs: int, axis_width: int, base: float) -> np.ndarray:
    return base ** (-2.0 * np.arange(n_pairs) / axis_width)


def spatial_phases(coords, cfg: RopeConfig, with_cls: bool = True) -> np.ndarray:
    """Angles of shape (N[+1], d_s/2); the u pairs come first, then the v pairs."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    inv = inv_frequencies(cfg.d_s // 4, cfg.d_s // 2, cfg.base_spatial)
    angles = np.concatenate([coords[:, :1] * inv, coords[:, 1:] * inv], axis=1)
    if with_cls:
        angles = np.concatenate([np.zeros((1, angles.shape[1])), angles], axis=0)
    return angles


def spectral_phases(wavelengths, cfg: RopeConfig, with_cls: bool = True) -> np.ndarray:
    lam = np.asarray(wavelengths, dtype=np.float64).reshape(-1, 1) * cfg.lambda_unit
    angles = lam * inv_frequencies(cfg.d_c // 2, cfg.d_c, cfg.base_spectral)
    if with_cls:
        angles = np.concatenate([np.zeros((1, angles.shape[1])), angles], axis=0)
    return angles


def rotate_pairs(x: Tensor, angles) -> Tensor:
    angles = np.asarray(angles, dtype=x.dtype)
    if angles.shape[-1] * 2 != x.shape[-1]:
        raise DimensionError(f"{angles.shape[-1]} angles cannot rotate width {x.shape[-1]}")
    return _rotate(x, np.cos(angles), np.sin(angles))


def apply_spatial(qk: Tensor, coords, cfg: RopeConfig) -> Tensor:
    """Rotate (..., N+1, d_s) queries/keys; token 0 (CLS) passes through."""
    if qk.shape[-1] != cfg.d_s:
        raise DimensionError(f"spatial width {qk.shape[-1]} != {cfg.d_s}")
    angles = spatial_phases(coords, cfg)
    if angles.shape[0] != qk.shape[-2]:
        raise DimensionError(f"{angles.shape[0] - 1} coords for {qk.shape[-2] - 1} tokens")
    return rotate_pairs(qk, angles)


def apply_spectral(qk: Tensor, wavelengths, cfg: RopeConfig) -> Tensor:
    if qk.shape[-1] != cfg.d_c:
        raise DimensionError(f"spectral width {qk.shape[-1]} != {cfg.d_c}")
    angles = spectral_phases(wavelengths, cfg)
    if angles.shape[0] != qk.shape[-2]:
        raise DimensionError(f"{angles.shape[0] - 1} wavelengths for {qk.shape[-2] - 1} tokens")
    return rotate_pairs(qk, angles)
