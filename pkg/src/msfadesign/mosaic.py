"""Forward measurement model of a periodically tiled filter array.

The full operator is ``I_B kron phi_block``; it is applied block-position by
block-position and never materialized except by
:func:`materialize_block_operator` for small-instance checks.
"""

from __future__ import annotations

import numpy as np

from .cube import MosaickedImage, MsfaBlock, ShapeMismatchError, SpectralCube


def materialize_block_operator(msfa: MsfaBlock) -> np.ndarray:
    """Block-diagonal ``M x (L*M)`` matrix with ``phi_m`` in row ``m``."""
    m, nb = msfa.sensitivities.shape
    op = np.zeros((m, m * nb))
    for i in range(m):
        op[i, i * nb:(i + 1) * nb] = msfa.sensitivities[i]
    return op


def mosaic(cube: SpectralCube, msfa: MsfaBlock, noise_sigma: float = 0.0,
           rng: np.random.Generator | None = None) -> MosaickedImage:
    """Sample ``cube`` through the tiled filter array.

    Each output pixel is the dot product of the pixel spectrum with the
    sensitivity row of its block position, accumulated band by band in
    increasing band order. ``noise_sigma > 0`` adds white Gaussian noise
    drawn from ``rng`` (a fresh default generator if omitted).
    """
    if cube.bands != msfa.bands:
        raise ShapeMismatchError(
            f"band count mismatch: cube has {cube.bands} bands, MSFA has {msfa.bands}"
        )
    g = msfa.geometry
    g.grid(cube.height, cube.width)
    out = np.zeros((cube.height, cube.width))
    phi = msfa.sensitivities
    for r in range(g.rows):
        for c in range(g.cols):
            m = r * g.cols + c
            pix = cube.data[r::g.rows, c::g.cols, :]
            acc = np.zeros(pix.shape[:2])
            for band in range(cube.bands):
                acc += pix[:, :, band] * phi[m, band]
            out[r::g.rows, c::g.cols] = acc
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if noise_sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        out += rng.normal(0.0, noise_sigma, size=out.shape)
    return MosaickedImage(out, g)
