"""Tied patch embedding and the CLS-augmented spatial-spectral token grid."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .spectral import HyperCube
from .tensor import DimensionError, Tensor, broadcast_to, concat, matmul, parameter


@dataclass
class EmbedParams:
    proj: Tensor  # (P*P, D), shared by every channel
    bias: Tensor  # (D,)
    cls_spatial: Tensor  # (D,)
    cls_spectral: Tensor  # (D,)
    cls_global: Tensor  # (D,)

    @property
    def patch_size(self) -> int:
        return int(round(np.sqrt(self.proj.shape[0])))

    @property
    def dim(self) -> int:
        return self.proj.shape[1]


def init_embed(patch: int, dim: int, rng: np.random.Generator, dtype=None) -> EmbedParams:
    p2 = patch * patch
    return EmbedParams(
        proj=parameter(rng.standard_normal((p2, dim)) / np.sqrt(p2), dtype),
        bias=parameter(np.zeros(dim), dtype),
        cls_spatial=parameter(0.02 * rng.standard_normal(dim), dtype),
        cls_spectral=parameter(0.02 * rng.standard_normal(dim), dtype),
        cls_global=parameter(0.02 * rng.standard_normal(dim), dtype),
    )


@dataclass
class TokenGrid:
    """Tokens of shape (B, N+1, C+1, D); index 0 on each grid axis is a CLS slot."""

    tokens: Tensor
    spatial_coords: np.ndarray  # (N, 2) patch-grid (u, v) for the non-CLS rows
    wavelengths: np.ndarray  # (C,) nm for the non-CLS columns

    cls_row = 0
    cls_col = 0

    def __post_init__(self):
        n1, c1 = self.tokens.shape[-3:-1]
        if len(self.spatial_coords) != n1 - 1 or len(self.wavelengths) != c1 - 1:
            raise DimensionError(
                f"grid {self.tokens.shape} does not match {len(self.spatial_coords)} coords "
                f"and {len(self.wavelengths)} wavelengths"
            )

    @property
    def n_spatial(self) -> int:
        return self.tokens.shape[-3] - 1

    @property
    def n_channels(self) -> int:
        return self.tokens.shape[-2] - 1

    def with_tokens(self, tokens: Tensor) -> "TokenGrid":
        return replace(self, tokens=tokens)


def patch_coords(rows: int, cols: int) -> np.ndarray:
    """(u, v) for patches enumerated row by row."""
    u, v = np.divmod(np.arange(rows * cols), cols)
    return np.stack([u, v], axis=1)


def patchify_array(values: np.ndarray, P: int) -> np.ndarray:
    """(..., C, H, W) -> (..., N, C, P*P), N running over patch rows then columns."""
    *lead, C, H, W = values.shape
    if H % P or W % P:
        raise DimensionError(f"image {H}x{W} is not divisible by patch size {P}")
    gh, gw = H // P, W // P
    x = values.reshape(*lead, C, gh, P, gw, P)
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k + 3, k, k + 2, k + 4)
    return np.ascontiguousarray(x.transpose(axes)).reshape(*lead, gh * gw, C, P * P)


def patchify(cube: HyperCube, P: int) -> Tensor:
    return Tensor(patchify_array(cube.values, P))


def unpatchify_array(patches: np.ndarray, P: int, H: int, W: int) -> np.ndarray:
    *lead, N, C, _ = patches.shape
    gh, gw = H // P, W // P
    x = patches.reshape(*lead, gh, gw, C, P, P)
    k = len(lead)
    axes = tuple(range(k)) + (k + 2, k, k + 3, k + 1, k + 4)
    return x.transpose(axes).reshape(*lead, C, H, W)


def embed(patches: Tensor, params: EmbedParams) -> Tensor:
    if patches.shape[-1] != params.proj.shape[0]:
        raise DimensionError(f"patch width {patches.shape[-1]} != embedding input {params.proj.shape[0]}")
    return matmul(patches, params.proj, label="embed") + params.bias


def augment_cls(tokens: Tensor, params: EmbedParams, coords, wavelengths) -> TokenGrid:
    """Attach a CLS row/column: [0,0] global, [0,c+1] spectral CLS, [n+1,0] spatial CLS."""
    *lead, N, C, D = tokens.shape
    lead = tuple(lead)
    top = concat(
        [
            broadcast_to(params.cls_global.reshape(1, 1, D), lead + (1, 1, D)),
            broadcast_to(params.cls_spectral.reshape(1, 1, D), lead + (1, C, D)),
        ],
        axis=-2,
    )
    body = concat([broadcast_to(params.cls_spatial.reshape(1, 1, D), lead + (N, 1, D)), tokens], axis=-2)
    grid = concat([top, body], axis=-3)
    return TokenGrid(grid, np.asarray(coords), np.asarray(wavelengths, dtype=np.float64))
