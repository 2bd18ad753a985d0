"""Channel configurations drawn from one 202-band wavelength grid."""
import numpy as np

from lessvit.spectral import make_config, make_reference_grid, synth_cube

grid = make_reference_grid()
print(f"grid: {len(grid)} bands, {grid.vnir_count} VNIR + {grid.swir_count} SWIR, "
      f"{grid.wavelengths[0]:.0f}-{grid.wavelengths[-1]:.0f} nm")
for kind in ("C120_VNIR+", "C120_SWIR+", "C82_disjoint", "C202_full"):
    cfg = make_config(grid, kind)
    vnir = int(np.sum(cfg.indices < grid.vnir_count))
    print(f"{kind:13s} {len(cfg):3d} channels  VNIR={vnir:3d} SWIR={len(cfg) - vnir:3d}")

# a cube generated on a subset equals the matching slice of the full cube
cfg = make_config(grid, "C82_disjoint")
full = synth_cube(grid.wavelengths, 16, 16, seed=4)
sub = synth_cube(cfg.wavelengths, 16, 16, seed=4)
print("subset cube equals slice of full cube:", np.array_equal(sub.values, full.values[cfg.indices]))
