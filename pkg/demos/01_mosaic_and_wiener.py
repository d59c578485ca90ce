"""
Sampling a cube through a filter array and undoing it
=====================================================

A 4x4 filter array sees one spectral projection per pixel. Given a prior on
how 4x4 blocks of the scene co-vary, a single linear map per block turns
those 16 numbers back into a full 16 x L block.
"""

# %%
# A synthetic scene whose spectra live in a 6-dimensional subspace.
import numpy as np

from msfadesign import BlockGeometry, demosaic, estimate_autocorrelation, mosaic, psnr_msi, wiener_from
from msfadesign.optimize import random_msfa
from msfadesign.synth import low_rank_cube
from msfadesign.wiener import relative_ridge

cube = low_rank_cube(64, 64, 16, rank=6, seed=0, noise=0.003)
print("cube", cube.shape, "wavelengths", cube.wavelengths[[0, -1]], "nm")

# %%
# A random filter array: every one of the 16 positions gets its own
# transmittance curve with values in [0, 1].
geometry = BlockGeometry(4, 4)
msfa = random_msfa(geometry, cube.bands, seed=1, wavelengths=cube.wavelengths)
sensor = mosaic(cube, msfa)
print("sensor image", sensor.data.shape)

# %%
# The block prior is the average outer product of vectorized 4x4 blocks.
# A tiny ridge keeps the 16 x 16 system well posed.
r = estimate_autocorrelation(cube, geometry)
w = wiener_from(msfa, r, relative_ridge(msfa, r))
estimate = demosaic(sensor, w)
print(f"reconstruction PSNR {psnr_msi(cube, estimate):.2f} dB")

# %%
# The same map applied to a scene it was not fitted on still works, since
# that scene shares the spectral subspace but not the pixels.
other = low_rank_cube(64, 64, 16, rank=6, seed=0, noise=0.003)
other = other.with_data(np.roll(other.data, 7, axis=0))
print(f"shifted scene PSNR {psnr_msi(other, demosaic(mosaic(other, msfa), w)):.2f} dB")
