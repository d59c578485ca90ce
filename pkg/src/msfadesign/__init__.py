"""Design of multispectral filter-array sensitivities by Wiener-demosaicking error minimization."""

from .colorimetry import (ColorMatchingTable, average_spectrum, cube_to_srgb, msfa_patch_colors,
                          psnr_msi, psnr_rgb)
from .cube import (BlockGeometry, MosaickedImage, MsfaBlock, ShapeMismatchError, SpectralCube,
                   devectorize_block, vectorize_block)
from .io import CubeFormatError, load_cube, load_msfa, load_wiener, save_cube, save_msfa, save_wiener
from .mosaic import materialize_block_operator, mosaic
from .optimize import (EigenBasis, OptimizationTrace, OptimizerConfig, build_eigenbasis, inner_solve,
                       optimize, reduced_objective)
from .wiener import (BlockAutocorrelation, SingularSystemError, WienerMatrix, demosaic,
                     estimate_autocorrelation, wiener_from)

__version__ = "0.1.0"

__all__ = [
    "average_spectrum",
    "BlockAutocorrelation",
    "BlockGeometry",
    "build_eigenbasis",
    "ColorMatchingTable",
    "cube_to_srgb",
    "CubeFormatError",
    "demosaic",
    "devectorize_block",
    "EigenBasis",
    "estimate_autocorrelation",
    "inner_solve",
    "load_cube",
    "load_msfa",
    "load_wiener",
    "materialize_block_operator",
    "mosaic",
    "MosaickedImage",
    "msfa_patch_colors",
    "MsfaBlock",
    "OptimizationTrace",
    "optimize",
    "OptimizerConfig",
    "psnr_msi",
    "psnr_rgb",
    "reduced_objective",
    "save_cube",
    "save_msfa",
    "save_wiener",
    "ShapeMismatchError",
    "SingularSystemError",
    "SpectralCube",
    "vectorize_block",
    "wiener_from",
    "WienerMatrix",
]
