"""
Rendering cubes and filters as colour
=====================================

Spectral cubes are rendered to sRGB under D65 by integrating against the
CIE 1931 observer. Filter curves get the same treatment, read as
transmittances, which gives each array position a visible colour.
"""

# %%
from pathlib import Path
import tempfile

import numpy as np

from msfadesign import (BlockGeometry, OptimizerConfig, cube_to_srgb, demosaic, mosaic,
                        msfa_patch_colors, optimize, psnr_rgb)
from msfadesign.colorimetry import write_average_spectrum_csv, write_ppm
from msfadesign.synth import low_rank_cube

cube = low_rank_cube(32, 32, 31, rank=5, seed=2, wavelengths=np.arange(420.0, 721.0, 10.0))
msfa, w, _ = optimize(cube, BlockGeometry(4, 4), cfg=OptimizerConfig(iterations=20, k=5))
estimate = demosaic(mosaic(cube, msfa), w)

# %%
# sRGB of reference and reconstruction, and their colour PSNR.
ref_rgb, est_rgb = cube_to_srgb(cube), cube_to_srgb(estimate)
print(f"RGB PSNR {psnr_rgb(ref_rgb, est_rgb):.2f} dB")

# %%
# One colour per filter position, laid out as the 4x4 block.
patches = msfa_patch_colors(msfa, wavelengths=cube.wavelengths).reshape(4, 4, 3)
print(np.round(patches * 255).astype(int)[0])

# %%
# Everything is written as PPM and CSV so any plotting tool can pick it up.
out = Path(tempfile.mkdtemp())
write_ppm(ref_rgb, out / "reference.ppm")
write_ppm(est_rgb, out / "estimate.ppm")
write_ppm(np.kron(patches, np.ones((16, 16, 1))), out / "patches.ppm")
write_average_spectrum_csv(cube, estimate, out / "average_spectrum.csv")
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)
