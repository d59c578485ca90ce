"""Multispectral cubes, filter-array blocks and block vectorization.

A cube is stored as an ``(H, W, L)`` array. Within an MSFA block of
``rows x cols`` pixels, the block vector stacks the pixel spectra row-major:
``[u_1, u_2, ..., u_M]`` with each ``u_m`` the ``L`` samples of one pixel.
Blocks themselves are enumerated row-major over the block grid, anchored at
pixel ``(0, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class ShapeMismatchError(ValueError):
    """Raised when arrays, geometries or band counts disagree."""


@dataclass(frozen=True)
class BlockGeometry:
    """Spatial layout of one filter-array block."""

    rows: int
    cols: int

    def __post_init__(self) -> None:
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValueError(f"block geometry must be at least 1x1, got {self.rows}x{self.cols}")
        object.__setattr__(self, "rows", int(self.rows))
        object.__setattr__(self, "cols", int(self.cols))

    @property
    def size(self) -> int:
        """Pixels per block (``M``)."""
        return self.rows * self.cols

    def grid(self, height: int, width: int) -> tuple[int, int]:
        """Number of block rows and block columns tiling an image."""
        if height % self.rows or width % self.cols:
            raise ShapeMismatchError(
                f"image {height}x{width} is not tiled exactly by {self.rows}x{self.cols} blocks"
            )
        return height // self.rows, width // self.cols


def _as_wavelengths(wavelengths, bands: int) -> NDArray[np.float64]:
    wl = np.asarray(wavelengths, dtype=np.float64).reshape(-1)
    if wl.size != bands:
        raise ShapeMismatchError(f"{wl.size} wavelengths given for {bands} bands")
    if wl.size > 1 and np.any(np.diff(wl) <= 0):
        raise ValueError("wavelengths must be strictly increasing")
    return wl


@dataclass(frozen=True, eq=False)
class SpectralCube:
    """An ``H x W x L`` multispectral image with its wavelength grid.

    ``data`` holds normalized transmittance. The ``[0, 1]`` range is enforced
    when a cube is loaded from disk (see :func:`msfadesign.io.load_cube`);
    demosaicked estimates are kept unclamped in memory. ``scale`` is the
    divisor that maps stored acquisition values to ``data``.
    """

    data: NDArray[np.float64]
    wavelengths: NDArray[np.float64]
    scale: float = 1.0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ShapeMismatchError(f"cube data must be 3-D (H, W, L), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube data contains non-finite values")
        data = data.copy()
        data.flags.writeable = False
        wl = _as_wavelengths(self.wavelengths, data.shape[2])
        wl.flags.writeable = False
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be a positive finite number, got {self.scale}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def in_unit_range(self) -> bool:
        return bool(self.data.min(initial=0.0) >= 0.0 and self.data.max(initial=0.0) <= 1.0)

    def with_data(self, data) -> SpectralCube:
        """Same wavelength grid and scale, new samples."""
        return SpectralCube(data, self.wavelengths, self.scale)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralCube):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.scale == other.scale
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class MsfaBlock:
    """Spectral sensitivities of one filter-array block.

    ``sensitivities`` is ``M x L``; row ``m`` belongs to the ``m``-th pixel of
    the block in row-major order and every entry lies in ``[0, 1]``.
    """

    geometry: BlockGeometry
    sensitivities: NDArray[np.float64]
    wavelengths: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        s = np.array(self.sensitivities, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != self.geometry.size:
            raise ShapeMismatchError(
                f"sensitivities must be {self.geometry.size} x L for a "
                f"{self.geometry.rows}x{self.geometry.cols} block, got shape {s.shape}"
            )
        if not np.all(np.isfinite(s)) or s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("sensitivities must lie in [0, 1]")
        s.flags.writeable = False
        object.__setattr__(self, "sensitivities", s)
        if self.wavelengths is not None:
            wl = _as_wavelengths(self.wavelengths, s.shape[1])
            wl.flags.writeable = False
            object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.sensitivities.shape[1]

    @property
    def size(self) -> int:
        return self.geometry.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, MsfaBlock):
            return NotImplemented
        wl_same = (self.wavelengths is None and other.wavelengths is None) or (
            self.wavelengths is not None
            and other.wavelengths is not None
            and np.array_equal(self.wavelengths, other.wavelengths)
        )
        return (
            self.geometry == other.geometry
            and wl_same
            and np.array_equal(self.sensitivities, other.sensitivities)
        )


@dataclass(frozen=True, eq=False)
class MosaickedImage:
    """Single-channel sensor image produced by periodic tiling of an MSFA block."""

    data: NDArray[np.float64]
    geometry: BlockGeometry

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ShapeMismatchError(f"mosaicked image must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("mosaicked image contains non-finite values")
        self.geometry.grid(*data.shape)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def to_blocks(data: NDArray, geometry: BlockGeometry) -> NDArray:
    """Rearrange an ``(H, W, L)`` or ``(H, W)`` array into one row per block.

    Returns shape ``(B, M*L)`` (or ``(B, M)`` for 2-D input), blocks row-major
    over the grid, pixels row-major within a block, spectra contiguous.
    """
    arr = np.asarray(data)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, nb = arr.shape
    gr, gc = geometry.grid(h, w)
    blocks = arr.reshape(gr, geometry.rows, gc, geometry.cols, nb).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(gr * gc, geometry.size * nb)


def from_blocks(blocks: NDArray, geometry: BlockGeometry, height: int, width: int) -> NDArray:
    """Inverse of :func:`to_blocks` for 3-D data; returns ``(H, W, L)``."""
    blocks = np.asarray(blocks)
    gr, gc = geometry.grid(height, width)
    if blocks.shape[0] != gr * gc or blocks.shape[1] % geometry.size:
        raise ShapeMismatchError(
            f"block array of shape {blocks.shape} does not fit a {height}x{width} image"
        )
    nb = blocks.shape[1] // geometry.size
    arr = blocks.reshape(gr, gc, geometry.rows, geometry.cols, nb).transpose(0, 2, 1, 3, 4)
    return arr.reshape(height, width, nb)


def vectorize_block(cube: SpectralCube, block_row: int, block_col: int,
                    geometry: BlockGeometry) -> NDArray[np.float64]:
    """Stack the spectra of one block into a length ``L*M`` vector."""
    gr, gc = geometry.grid(cube.height, cube.width)
    if not (0 <= block_row < gr and 0 <= block_col < gc):
        raise IndexError(f"block ({block_row}, {block_col}) outside the {gr}x{gc} block grid")
    r0, c0 = block_row * geometry.rows, block_col * geometry.cols
    patch = cube.data[r0:r0 + geometry.rows, c0:c0 + geometry.cols, :]
    return patch.reshape(-1).copy()


def devectorize_block(vector, geometry: BlockGeometry, bands: int) -> NDArray[np.float64]:
    """Reshape a block vector back to ``(rows, cols, L)``."""
    vec = np.asarray(vector, dtype=np.float64)
    if vec.size != geometry.size * bands:
        raise ShapeMismatchError(
            f"vector of length {vec.size} does not match {geometry.size} pixels x {bands} bands"
        )
    return vec.reshape(geometry.rows, geometry.cols, bands)
