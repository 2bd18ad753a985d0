"""LESS attention: pooled axis tokens, per-axis attention, Kronecker composition.

Shapes used throughout (batch axis first):

    grid tokens     (B, N+1, C+1, D)
    spatial tokens  (B, H, N+1, d1)    pooled over the spectral axis
    spectral tokens (B, H, C+1, d2)    pooled over the spatial axis
    branch outputs  (B, r, H, L, d)

with ``H * d1 * d2 == D``. Composition writes feature ``h*d1*d2 + i*d2 + j``
of token (n, c) as ``sum_r Y_S[r, h, n, i] * Y_C[r, h, c, j]``.

The dense spatial-spectral attention over all (N+1)(C+1) tokens lives here
too; it is the quadratic reference the factorized form is measured against.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .embed import TokenGrid
from .errors import CapacityError, ConfigError
from .ssrope import RopeConfig, spatial_phases, spectral_phases
from .tensor import (
    DimensionError,
    Tensor,
    gelu,
    layer_norm,
    matmul,
    parameter,
    rotate_pairs,
    softmax_rows,
    transpose,
)


DEFAULT_TOKEN_CAP = 20_000


@dataclass
class PoolParams:
    """Single-query attention pooling along one grid axis."""

    w_q: Tensor  # (D, D)
    w_k: Tensor  # (D, D)
    w_v: Tensor  # (D, D)
    w_d: Tensor  # (D, H*d); column block h is head h's projection


@dataclass
class LESSBlockParams:
    dim: int
    heads: int
    d1: int
    d2: int
    rank: int
    pool_spatial: PoolParams  # collapses the spectral axis -> spatial tokens
    pool_spectral: PoolParams  # collapses the spatial axis -> spectral tokens
    wq_s: Tensor  # (r, H, d1, d1)
    wk_s: Tensor
    wv_s: Tensor
    wq_c: Tensor  # (r, H, d2, d2)
    wk_c: Tensor
    wv_c: Tensor
    w_o: Tensor  # (D, D)
    b_o: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor  # (D, 4D)
    mlp_b1: Tensor
    mlp_w2: Tensor  # (4D, D)
    mlp_b2: Tensor


def _check_layout(dim, heads, d1, d2, rank):
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    if d1 * d2 * heads != dim:
        raise ConfigError(f"d1*d2*heads = {d1}*{d2}*{heads} != width {dim}")


def _dense(rng, fan_in, shape, dtype, scale=1.0):
    return parameter(scale * rng.standard_normal(shape) / np.sqrt(fan_in), dtype)


def init_pool(dim: int, d_out: int, rng, dtype=None) -> PoolParams:
    return PoolParams(
        w_q=_dense(rng, dim, (dim, dim), dtype),
        w_k=_dense(rng, dim, (dim, dim), dtype),
        w_v=_dense(rng, dim, (dim, dim), dtype),
        w_d=_dense(rng, dim, (dim, d_out), dtype),
    )


def init_less_block(
    dim: int, heads: int, d1: int, d2: int, rank: int, rng: np.random.Generator, dtype=None, mlp_ratio: int = 4
) -> LESSBlockParams:
    _check_layout(dim, heads, d1, d2, rank)
    hidden = mlp_ratio * dim
    return LESSBlockParams(
        dim=dim, heads=heads, d1=d1, d2=d2, rank=rank,
        pool_spatial=init_pool(dim, heads * d1, rng, dtype),
        pool_spectral=init_pool(dim, heads * d2, rng, dtype),
        wq_s=_dense(rng, d1, (rank, heads, d1, d1), dtype),
        wk_s=_dense(rng, d1, (rank, heads, d1, d1), dtype),
        wv_s=_dense(rng, d1, (rank, heads, d1, d1), dtype),
        wq_c=_dense(rng, d2, (rank, heads, d2, d2), dtype),
        wk_c=_dense(rng, d2, (rank, heads, d2, d2), dtype),
        wv_c=_dense(rng, d2, (rank, heads, d2, d2), dtype),
        w_o=_dense(rng, dim, (dim, dim), dtype),
        b_o=parameter(np.zeros(dim), dtype),
        ln1_g=parameter(np.ones(dim), dtype),
        ln1_b=parameter(np.zeros(dim), dtype),
        ln2_g=parameter(np.ones(dim), dtype),
        ln2_b=parameter(np.zeros(dim), dtype),
        mlp_w1=_dense(rng, dim, (dim, hidden), dtype),
        mlp_b1=parameter(np.zeros(hidden), dtype),
        mlp_w2=_dense(rng, hidden, (hidden, dim), dtype),
        mlp_b2=parameter(np.zeros(dim), dtype),
    )


@dataclass
class AttentionFactors:
    """Intermediate quantities of one LESS attention call (per rank and head)."""

    spatial_tokens: Tensor  # (B, H, N+1, d1)
    spectral_tokens: Tensor  # (B, H, C+1, d2)
    a_s: Tensor  # (B, r, H, N+1, N+1)
    a_c: Tensor  # (B, r, H, C+1, C+1)
    v_s: Tensor  # (B, r, H, N+1, d1)
    v_c: Tensor  # (B, r, H, C+1, d2)
    y_s: Tensor
    y_c: Tensor
    composed: Tensor  # (B, N+1, C+1, D) before the output projection
    pool_weights: dict = field(default_factory=dict)


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 4:
        raise DimensionError(f"expected a (B, N+1, C+1, D) grid, got {x.shape}")
    return x, False


def atten_pool(x: Tensor, pool: PoolParams, pool_axis: str, return_weights: bool = False):
    """Collapse one grid axis with its CLS entry (index 0) as the query.

    ``pool_axis="spectral"`` pools over channels and returns one token per
    spatial index, shape (B, N+1, d_out); ``"spatial"`` pools over spatial
    positions and returns (B, C+1, d_out).

    The key map is folded into the query (``q W_K^T`` then dot with raw
    tokens) and the value map applied after the weighted sum, which gives
    the same result as projecting every token first but costs O(L*D) per
    pooled row instead of O(L*D^2).
    """
    x, squeeze = _batched(x)
    if pool_axis == "spatial":
        x = transpose(x, (0, 2, 1, 3))
    elif pool_axis != "spectral":
        raise ConfigError(f"pool_axis must be 'spatial' or 'spectral', got {pool_axis!r}")
    B, L, M, D = x.shape  # pool over M for each of L rows
    if pool.w_q.shape != (D, D):
        raise ConfigError(f"pooling maps expect width {pool.w_q.shape[0]}, grid has {D}")
    cls = x[:, :, 0, :]  # (B, L, D)
    q = matmul(matmul(cls, pool.w_q, "pool"), transpose(pool.w_k, (1, 0)), "pool")
    scores = matmul(x, q.reshape(B, L, D, 1), "pool").reshape(B, L, 1, M) * (1.0 / np.sqrt(D))
    weights = softmax_rows(scores)
    mixed = matmul(weights, x, "pool").reshape(B, L, D)
    out = matmul(matmul(mixed, pool.w_v, "pool"), pool.w_d, "pool")
    if squeeze:
        out = out.reshape(out.shape[1:])
        weights = weights.reshape(weights.shape[1:])
    return (out, weights) if return_weights else out


def branch_attention(
    tokens: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    angles: np.ndarray | None = None,
    label: str = "spatial",
):
    """Per-axis softmax attention for every rank and head.

    tokens: (B, H, L, d); weights: (r, H, d, d); angles: (L, d/2) rotary
    phases for Q and K or None. Returns (A, Y) with A (B, r, H, L, L) and
    Y (B, r, H, L, d), plus V for oracle use.
    """
    B, H, L, d = tokens.shape
    x = tokens.reshape(B, 1, H, L, d)
    q = matmul(x, w_q, label + "_proj")
    k = matmul(x, w_k, label + "_proj")
    v = matmul(x, w_v, label + "_proj")
    if angles is not None:
        cos = np.cos(angles).astype(q.dtype)
        sin = np.sin(angles).astype(q.dtype)
        q = rotate_pairs(q, cos, sin)
        k = rotate_pairs(k, cos, sin)
    scores = matmul(q, transpose(k, (0, 1, 2, 4, 3)), label) * (1.0 / np.sqrt(d))
    a = softmax_rows(scores)
    y = matmul(a, v, label)
    return a, y, v


def kron_compose(y_c: Tensor, y_s: Tensor) -> Tensor:
    """Sum over ranks of per-head Kronecker products, spatial-major features.

    Accepts (B, r, H, L, d) factors, or (r, L, d) for a single head without
    batch, in which case the result is (N+1, C+1, d1*d2).
    """
    single = y_s.ndim == 3
    if single:
        y_s = y_s.reshape((1, y_s.shape[0], 1) + y_s.shape[1:])
        y_c = y_c.reshape((1, y_c.shape[0], 1) + y_c.shape[1:])
    B, r, H, N1, d1 = y_s.shape
    C1, d2 = y_c.shape[-2:]
    if y_c.shape[:3] != (B, r, H):
        raise DimensionError(f"factor layouts differ: {y_s.shape} vs {y_c.shape}")
    left = transpose(y_s, (0, 2, 3, 4, 1)).reshape(B, H, N1 * d1, r)
    right = transpose(y_c, (0, 2, 1, 3, 4)).reshape(B, H, r, C1 * d2)
    outer = matmul(left, right, "compose").reshape(B, H, N1, d1, C1, d2)
    out = transpose(outer, (0, 2, 4, 1, 3, 5)).reshape(B, N1, C1, H * d1 * d2)
    return out.reshape(N1, C1, d1 * d2) if single else out


def less_attention(
    grid: TokenGrid,
    params: LESSBlockParams,
    rope: RopeConfig | None = None,
    compose: Callable[[Tensor, Tensor], Tensor] = kron_compose,
    return_factors: bool = False,
):
    """Factorized spatial-spectral attention; output has the grid's shape.

    ``rope=None`` disables rotary phases (any d1, d2 allowed then).
    """
    x, squeeze = _batched(grid.tokens)
    B, N1, C1, D = x.shape
    H, d1, d2, r = params.heads, params.d1, params.d2, params.rank
    _check_layout(D, H, d1, d2, r)
    if r > min(N1, C1):
        raise ConfigError(f"rank {r} exceeds min(N+1, C+1) = {min(N1, C1)}")

    xs, pool_w_s = atten_pool(x, params.pool_spatial, "spectral", return_weights=True)
    xc, pool_w_c = atten_pool(x, params.pool_spectral, "spatial", return_weights=True)
    xs = transpose(xs.reshape(B, N1, H, d1), (0, 2, 1, 3))
    xc = transpose(xc.reshape(B, C1, H, d2), (0, 2, 1, 3))

    ang_s = ang_c = None
    if rope is not None:
        cfg = rope.for_widths(d1, d2)
        ang_s = spatial_phases(grid.spatial_coords, cfg)
        ang_c = spectral_phases(grid.wavelengths, cfg)
    a_s, y_s, v_s = branch_attention(xs, params.wq_s, params.wk_s, params.wv_s, ang_s, "spatial")
    a_c, y_c, v_c = branch_attention(xc, params.wq_c, params.wk_c, params.wv_c, ang_c, "spectral")
    composed = compose(y_c, y_s)
    out = matmul(composed, params.w_o, "out_proj") + params.b_o
    if squeeze:
        out = out.reshape(out.shape[1:])
    if not return_factors:
        return out
    factors = AttentionFactors(
        spatial_tokens=xs, spectral_tokens=xc, a_s=a_s, a_c=a_c, v_s=v_s, v_c=v_c,
        y_s=y_s, y_c=y_c, composed=composed,
        pool_weights={"spatial": pool_w_s, "spectral": pool_w_c},
    )
    return out, factors


def mlp(x: Tensor, params: LESSBlockParams) -> Tensor:
    h = gelu(matmul(x, params.mlp_w1, "mlp") + params.mlp_b1)
    return matmul(h, params.mlp_w2, "mlp") + params.mlp_b2


def less_block(grid: TokenGrid, params: LESSBlockParams, rope: RopeConfig | None = None) -> TokenGrid:
    """Pre-norm residual block: attention then a 4x MLP."""
    x = grid.tokens
    h = layer_norm(x, params.ln1_g, params.ln1_b)
    x = x + less_attention(grid.with_tokens(h), params, rope)
    h = layer_norm(x, params.ln2_g, params.ln2_b)
    x = x + mlp(h, params)
    return grid.with_tokens(x)


def less_flops(N1: int, C1: int, params_or_layout, batch: int = 1) -> dict[str, int]:
    """Closed-form matmul FLOPs of one ``less_attention`` call, per label."""
    p = params_or_layout
    D, H, d1, d2, r = p.dim, p.heads, p.d1, p.d2, p.rank

    def pool(L, M, d_out):
        return 2 * L * D * D * 3 + 2 * L * M * D * 2 + 2 * L * D * d_out

    return {
        "pool": batch * (pool(N1, C1, H * d1) + pool(C1, N1, H * d2)),
        "spatial_proj": batch * 3 * 2 * r * H * N1 * d1 * d1,
        "spectral_proj": batch * 3 * 2 * r * H * C1 * d2 * d2,
        "spatial": batch * 2 * (2 * r * N1 * N1 * d1 * H),
        "spectral": batch * 2 * (2 * r * C1 * C1 * d2 * H),
        "compose": batch * 2 * r * N1 * C1 * D,
        "out_proj": batch * 2 * N1 * C1 * D * D,
    }


# -- dense reference ------------------------------------------------------------

@dataclass
class DenseParams:
    dim: int
    heads: int
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    b_o: Tensor


def init_dense(dim: int, heads: int, rng, dtype=None) -> DenseParams:
    if dim % heads:
        raise ConfigError(f"width {dim} not divisible by {heads} heads")
    return DenseParams(
        dim=dim, heads=heads,
        w_q=_dense(rng, dim, (dim, dim), dtype),
        w_k=_dense(rng, dim, (dim, dim), dtype),
        w_v=_dense(rng, dim, (dim, dim), dtype),
        w_o=_dense(rng, dim, (dim, dim), dtype),
        b_o=parameter(np.zeros(dim), dtype),
    )


def full_ss_attention(
    grid: TokenGrid | Tensor,
    params: DenseParams,
    token_cap: int = DEFAULT_TOKEN_CAP,
    return_attention: bool = False,
):
    """Multi-head attention over all flattened (N+1)(C+1) grid tokens."""
    tokens = grid.tokens if isinstance(grid, TokenGrid) else grid
    x, squeeze = _batched(tokens)
    B, N1, C1, D = x.shape
    T = N1 * C1
    if T > token_cap:
        raise CapacityError(f"{T} flattened tokens exceed the cap of {token_cap}")
    H = params.heads
    dh = D // H
    flat = x.reshape(B, T, D)

    def heads(t):
        return transpose(t.reshape(B, T, H, dh), (0, 2, 1, 3))

    q = heads(matmul(flat, params.w_q, "dense_proj"))
    k = heads(matmul(flat, params.w_k, "dense_proj"))
    v = heads(matmul(flat, params.w_v, "dense_proj"))
    a = softmax_rows(matmul(q, transpose(k, (0, 1, 3, 2)), "dense") * (1.0 / np.sqrt(dh)))
    y = transpose(matmul(a, v, "dense"), (0, 2, 1, 3)).reshape(B, T, D)
    out = (matmul(y, params.w_o, "dense_proj") + params.b_o).reshape(B, N1, C1, D)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return (out, a) if return_attention else out


def dense_flops(N1: int, C1: int, dim: int, batch: int = 1) -> dict[str, int]:
    T = N1 * C1
    return {"dense": batch * 2 * T * T * dim * 2, "dense_proj": batch * 4 * 2 * T * dim * dim}


def zero_output_projections(params: LESSBlockParams) -> LESSBlockParams:
    """Copy of ``params`` whose residual branches output exactly zero."""
    dtype = params.w_o.dtype
    return replace(
        params,
        w_o=parameter(np.zeros_like(params.w_o.data), dtype),
        b_o=parameter(np.zeros_like(params.b_o.data), dtype),
        mlp_w2=parameter(np.zeros_like(params.mlp_w2.data), dtype),
        mlp_b2=parameter(np.zeros_like(params.mlp_b2.data), dtype),
    )
