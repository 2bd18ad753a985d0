"""Factorized LESS output against the explicitly materialized Kronecker product."""
import numpy as np

from lessvit.attention import init_less_block, less_attention
from lessvit.embed import TokenGrid, patch_coords
from lessvit.tensor import Tensor
from lessvit.verify import materialized_rank1

rng = np.random.default_rng(0)
N_side, C, D, H, d1, d2 = 2, 4, 8, 1, 4, 2
N1, C1 = N_side * N_side + 1, C + 1
params = init_less_block(D, H, d1, d2, 1, rng, np.float64)
grid = TokenGrid(Tensor(rng.standard_normal((N1, C1, D))), patch_coords(N_side, N_side), np.linspace(450, 2400, C))

_, f = less_attention(grid, params, rope=None, return_factors=True)
a_s, a_c = f.a_s.data[0, 0, 0], f.a_c.data[0, 0, 0]
print(f"axis attention shapes: spatial {a_s.shape}, spectral {a_c.shape}")
print(f"joint attention would be {N1 * C1}x{N1 * C1} = {(N1 * C1) ** 2} entries, "
      f"the factors hold {a_s.size + a_c.size}")

joint = np.kron(a_c, a_s)
print("joint rows sum to 1:", np.allclose(joint.sum(axis=1), 1.0))
want = materialized_rank1(a_c, a_s, f.v_c.data[0, 0, 0], f.v_s.data[0, 0, 0])
err = np.max(np.abs(f.composed.numpy()[0] - want))
print(f"max |factorized - materialized| = {err:.2e}")
