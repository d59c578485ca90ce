"""Block autocorrelation prior and linear Wiener demosaicking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import (BlockGeometry, MosaickedImage, MsfaBlock, ShapeMismatchError, SpectralCube,
                   from_blocks, to_blocks)
from .mosaic import materialize_block_operator

# Blocks accumulated per chunk when estimating the autocorrelation; the chunk
# order is fixed so the sum is reproducible.
_CHUNK = 4096

# Condition number above which an unregularized M x M system is refused.
COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """The Wiener system is singular or too ill-conditioned to invert without a ridge."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(
            f"phi R phi^T is singular to working precision (condition number ~ {cond:.3g}); "
            "use a positive ridge"
        )


@dataclass(frozen=True, eq=False)
class BlockAutocorrelation:
    """Second-moment matrix of vectorized blocks, ``LM x LM``."""

    geometry: BlockGeometry
    bands: int
    matrix: np.ndarray
    sample_count: int
    wavelengths: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.geometry.size * self.bands
        if self.matrix.shape != (n, n):
            raise ShapeMismatchError(f"autocorrelation must be {n}x{n}, got {self.matrix.shape}")


@dataclass(frozen=True, eq=False)
class WienerMatrix:
    """Reconstruction matrix mapping ``M`` block measurements to ``L*M`` samples."""

    geometry: BlockGeometry
    bands: int
    matrix: np.ndarray
    ridge: float = 0.0
    wavelengths: np.ndarray | None = None

    def __post_init__(self) -> None:
        m = self.geometry.size
        if self.matrix.shape != (m * self.bands, m):
            raise ShapeMismatchError(
                f"Wiener matrix must be {m * self.bands}x{m}, got {self.matrix.shape}"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("Wiener matrix has non-finite entries")


def estimate_autocorrelation(cube: SpectralCube, geometry: BlockGeometry) -> BlockAutocorrelation:
    """Average ``u_b u_b^T`` over all non-overlapping aligned blocks.

    No mean is removed: this is an autocorrelation, not a covariance.
    """
    blocks = to_blocks(cube.data, geometry)
    count = blocks.shape[0]
    if count < 1:
        raise ShapeMismatchError("cube holds no complete block")
    acc = np.zeros((blocks.shape[1], blocks.shape[1]))
    for start in range(0, count, _CHUNK):
        chunk = blocks[start:start + _CHUNK]
        acc += chunk.T @ chunk
    acc /= count
    acc = 0.5 * (acc + acc.T)
    return BlockAutocorrelation(geometry, cube.bands, acc, count, cube.wavelengths)


def relative_ridge(msfa: MsfaBlock, r: BlockAutocorrelation, factor: float = 1e-8) -> float:
    """``factor * trace(phi R phi^T) / M``, the default optimization ridge."""
    phi = materialize_block_operator(msfa)
    return factor * float(np.trace(phi @ r.matrix @ phi.T)) / msfa.size


def wiener_from(msfa: MsfaBlock, r: BlockAutocorrelation, ridge: float = 0.0) -> WienerMatrix:
    """``R phi^T (phi R phi^T + ridge I)^-1``.

    With ``ridge == 0`` an ill-conditioned system raises
    :class:`SingularSystemError` instead of returning garbage.
    """
    if msfa.geometry != r.geometry or msfa.bands != r.bands:
        raise ShapeMismatchError(
            f"MSFA ({msfa.geometry.rows}x{msfa.geometry.cols}, {msfa.bands} bands) does not "
            f"match autocorrelation ({r.geometry.rows}x{r.geometry.cols}, {r.bands} bands)"
        )
    if not ridge >= 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    phi = materialize_block_operator(msfa)
    cross = r.matrix @ phi.T  # R phi^T, LM x M
    gram = phi @ cross
    gram = 0.5 * (gram + gram.T)
    if ridge == 0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise SingularSystemError(float(cond))
    else:
        gram = gram + ridge * np.eye(msfa.size)
    # LU solve: a 1x1 system is a single correctly rounded division, so
    # scalar chains reproduce their input bit for bit
    wt = np.linalg.solve(gram, cross.T)
    wl = r.wavelengths if r.wavelengths is not None else msfa.wavelengths
    return WienerMatrix(msfa.geometry, msfa.bands, np.ascontiguousarray(wt.T), float(ridge), wl)


def normal_equation_residual(w: WienerMatrix, msfa: MsfaBlock, r: BlockAutocorrelation) -> float:
    """Relative Frobenius residual of ``W (phi R phi^T + ridge I) = R phi^T``."""
    phi = materialize_block_operator(msfa)
    cross = r.matrix @ phi.T
    lhs = w.matrix @ (phi @ cross + w.ridge * np.eye(msfa.size))
    return float(np.linalg.norm(lhs - cross) / np.linalg.norm(cross))


def demosaic(img: MosaickedImage, w: WienerMatrix, wavelengths=None) -> SpectralCube:
    """Reconstruct every block as ``W v_b``; values are not clamped."""
    if img.geometry != w.geometry:
        raise ShapeMismatchError(
            f"mosaic geometry {img.geometry.rows}x{img.geometry.cols} does not match "
            f"Wiener geometry {w.geometry.rows}x{w.geometry.cols}"
        )
    v = to_blocks(img.data, img.geometry)
    u = v @ w.matrix.T
    data = from_blocks(u, w.geometry, img.height, img.width)
    if wavelengths is None:
        wavelengths = w.wavelengths if w.wavelengths is not None else np.arange(w.bands, dtype=float)
    return SpectralCube(data, wavelengths)
