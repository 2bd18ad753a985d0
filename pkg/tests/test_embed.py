import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lessvit.embed import (
    TokenGrid,
    augment_cls,
    embed,
    init_embed,
    patch_coords,
    patchify,
    patchify_array,
    unpatchify_array,
)
from lessvit.errors import DimensionError
from lessvit.spectral import HyperCube, make_reference_grid, synth_cube
from lessvit.tensor import Tensor


def params(P=2, D=6, seed=0):
    return init_embed(P, D, np.random.default_rng(seed), np.float64)


def test_patchify_brute_force():
    C, H, W, P = 2, 4, 6, 2
    values = np.arange(C * H * W, dtype=np.float64).reshape(C, H, W)
    out = patchify_array(values, P)
    gw = W // P
    assert out.shape == ((H // P) * gw, C, P * P)
    for n in range(out.shape[0]):
        r, c = divmod(n, gw)
        for ch in range(C):
            for k in range(P * P):
                i, j = divmod(k, P)
                assert out[n, ch, k] == values[ch, r * P + i, c * P + j]


def test_single_patch_is_whole_plane():
    cube = synth_cube(np.array([500.0, 1500.0]), 4, 4, seed=0)
    out = patchify(cube, 4).numpy()
    assert out.shape == (1, 2, 16)
    np.testing.assert_array_equal(out[0, 1], cube.values[1].ravel())


def test_constant_cube():
    cube = HyperCube(np.full((3, 4, 4), 2.5), np.array([500.0, 600.0, 700.0]))
    assert np.all(patchify(cube, 2).numpy() == 2.5)


def test_patchify_indivisible():
    with pytest.raises(DimensionError):
        patchify_array(np.zeros((1, 5, 4)), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(1, 4))
def test_patchify_round_trip(C, gh, gw, P):
    rng = np.random.default_rng(C * 100 + gh * 10 + gw)
    v = rng.standard_normal((2, C, gh * P, gw * P))
    np.testing.assert_array_equal(unpatchify_array(patchify_array(v, P), P, gh * P, gw * P), v)


def test_patch_coords_row_major():
    np.testing.assert_array_equal(patch_coords(2, 3), [[0, 0], [0, 1], [0, 2], [1, 0], [1, 1], [1, 2]])


def test_embed_zero_patches_give_bias():
    p = params()
    out = embed(Tensor(np.zeros((3, 2, 4)), dtype=np.float64), p).numpy()
    np.testing.assert_array_equal(out, np.broadcast_to(p.bias.numpy(), out.shape))


def test_embed_single_token_oracle():
    p = params(seed=1)
    x = np.random.default_rng(2).standard_normal((1, 1, 4))
    got = embed(Tensor(x, dtype=np.float64), p).numpy()[0, 0]
    want = x[0, 0] @ p.proj.numpy() + p.bias.numpy()
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-14)


def test_embed_rejects_wrong_patch_width():
    with pytest.raises(DimensionError):
        embed(Tensor(np.zeros((1, 1, 9))), params())


def test_embed_channel_permutation_equivariant():
    p = params(seed=3)
    x = np.random.default_rng(4).standard_normal((3, 5, 4))
    perm = np.array([3, 0, 4, 1, 2])
    a = embed(Tensor(x[:, perm], dtype=np.float64), p).numpy()
    b = embed(Tensor(x, dtype=np.float64), p).numpy()[:, perm]
    np.testing.assert_array_equal(a, b)


def test_embed_linear_up_to_bias():
    p = params(seed=5)
    rng = np.random.default_rng(6)
    x, y = rng.standard_normal((2, 2, 4)), rng.standard_normal((2, 2, 4))
    e = lambda v: embed(Tensor(v, dtype=np.float64), p).numpy() - p.bias.numpy()
    np.testing.assert_allclose(e(2 * x - 3 * y), 2 * e(x) - 3 * e(y), atol=1e-12)


def _grid(C, p, seed=0):
    rng = np.random.default_rng(seed)
    tokens = embed(Tensor(rng.standard_normal((4, C, 4)), dtype=np.float64), p)
    wl = np.linspace(420, 2445, C)
    return tokens, augment_cls(tokens, p, patch_coords(2, 2), wl)


@pytest.mark.parametrize("C", [1, 3, 17, 202])
def test_augment_layout_any_channel_count(C):
    p = params()
    tokens, grid = _grid(C, p)
    g = grid.tokens.numpy()
    assert g.shape == (5, C + 1, 6)
    np.testing.assert_array_equal(g[0, 0], p.cls_global.numpy())
    np.testing.assert_array_equal(g[0, 1:], np.broadcast_to(p.cls_spectral.numpy(), (C, 6)))
    np.testing.assert_array_equal(g[1:, 0], np.broadcast_to(p.cls_spatial.numpy(), (4, 6)))
    np.testing.assert_array_equal(g[1:, 1:], tokens.numpy())
    assert grid.n_spatial == 4 and grid.n_channels == C


def test_joint_channel_permutation_permutes_columns():
    p = params()
    rng = np.random.default_rng(7)
    x = rng.standard_normal((4, 5, 4))
    wl = np.array([500.0, 700.0, 900.0, 1200.0, 2000.0])
    perm = np.array([2, 4, 0, 1, 3])
    g = augment_cls(embed(Tensor(x, dtype=np.float64), p), p, patch_coords(2, 2), wl)
    gp = augment_cls(embed(Tensor(x[:, perm], dtype=np.float64), p), p, patch_coords(2, 2), wl[perm])
    np.testing.assert_array_equal(gp.tokens.numpy()[:, 1:], g.tokens.numpy()[:, 1 + perm])
    np.testing.assert_array_equal(gp.tokens.numpy()[:, 0], g.tokens.numpy()[:, 0])
    np.testing.assert_array_equal(gp.wavelengths, wl[perm])


def test_token_grid_metadata_mismatch():
    with pytest.raises(DimensionError):
        TokenGrid(Tensor(np.zeros((3, 3, 2))), patch_coords(1, 1), np.array([500.0, 600.0]))


def test_same_params_across_channel_configs():
    p = params()
    grid = make_reference_grid()
    for C in (8, 120):
        cube = synth_cube(grid.wavelengths[:C], 4, 4, seed=0)
        tok = embed(patchify(cube, 2), p)
        assert tok.shape == (4, C, 6)
