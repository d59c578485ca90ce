"""Synthetic low-rank spectral cubes for tests and demonstrations."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .cube import SpectralCube


def spectral_basis(rank: int, wavelengths, rng: np.random.Generator) -> np.ndarray:
    """``rank`` smooth nonnegative spectra (Gaussian bumps on an offset)."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    lo, hi = wl[0], wl[-1]
    span = max(hi - lo, 1.0)
    centers = rng.uniform(lo, hi, size=rank)
    widths = rng.uniform(0.08, 0.35, size=rank) * span
    offsets = rng.uniform(0.0, 0.3, size=rank)
    return offsets[:, None] + np.exp(-0.5 * ((wl[None, :] - centers[:, None]) / widths[:, None]) ** 2)


def low_rank_cube(height: int, width: int, bands: int, rank: int, seed: int = 0,
                  noise: float = 0.0, smooth: float = 1.0, wavelengths=None) -> SpectralCube:
    """Cube whose spectra lie in a random ``rank``-dimensional subspace.

    Per-pixel abundances are nonnegative random fields, spatially blurred by
    a Gaussian of ``smooth`` pixels so that neighbouring pixels correlate.
    The noiseless cube is scaled to a peak of 0.9; additive Gaussian noise of
    standard deviation ``noise`` is then added and the result clipped to
    ``[0, 1]`` and rounded to float32 precision.
    """
    if min(height, width, bands, rank) < 1:
        raise ValueError("height, width, bands and rank must all be >= 1")
    if rank > bands:
        raise ValueError(f"rank {rank} exceeds band count {bands}")
    if noise < 0 or smooth < 0:
        raise ValueError("noise and smooth must be >= 0")
    if wavelengths is None:
        wavelengths = np.linspace(420.0, 720.0, bands) if bands > 1 else np.array([550.0])
    rng = np.random.default_rng(seed)
    basis = spectral_basis(rank, wavelengths, rng)
    abundances = rng.uniform(0.0, 1.0, size=(height, width, rank))
    if smooth > 0:
        for j in range(rank):
            abundances[:, :, j] = gaussian_filter(abundances[:, :, j], smooth, mode="wrap")
    data = abundances @ basis
    data *= 0.9 / data.max()
    if noise > 0:
        data += rng.normal(0.0, noise, size=data.shape)
    data = np.clip(data, 0.0, 1.0).astype(np.float32).astype(np.float64)
    return SpectralCube(data, wavelengths)
