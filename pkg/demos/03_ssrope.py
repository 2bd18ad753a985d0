"""Rotary phases over patch position and wavelength: logits depend only on offsets."""
import numpy as np

from lessvit.ssrope import RopeConfig, rotate_pairs, spatial_phases, spectral_phases
from lessvit.tensor import Tensor

cfg = RopeConfig(d_s=8, d_c=2)
rng = np.random.default_rng(1)
q, k = rng.standard_normal(8), rng.standard_normal(8)


def rot(pos, v):
    return rotate_pairs(Tensor(v), spatial_phases(np.array([pos], float), cfg, with_cls=False)[0]).numpy()


for shift in [(0, 0), (3, -2), (40, 17)]:
    p1, p2 = np.add((1, 2), shift), np.add((4, 0), shift)
    print(f"spatial shift {shift}: logit = {rot(p1, q) @ rot(p2, k):+.12f}")

qc, kc = rng.standard_normal(2), rng.standard_normal(2)
for delta in (0.0, 150.0, -300.0):
    a = rotate_pairs(Tensor(qc), spectral_phases([700.0 + delta], cfg, with_cls=False)[0]).numpy()
    b = rotate_pairs(Tensor(kc), spectral_phases([1300.0 + delta], cfg, with_cls=False)[0]).numpy()
    print(f"wavelength shift {delta:+6.0f} nm: logit = {a @ b:+.12f}")

print("CLS slot angles:", spatial_phases(np.array([[5.0, 5.0]]), cfg)[0], spectral_phases([900.0], cfg)[0])
