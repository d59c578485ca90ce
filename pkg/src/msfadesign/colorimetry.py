"""sRGB rendering under D65, PSNR and spectral summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .cube import MsfaBlock, ShapeMismatchError, SpectralCube

# linear sRGB from CIE XYZ (IEC 61966-2-1)
XYZ_TO_SRGB = np.array([
    [3.2406, -1.5372, -0.4986],
    [-0.9689, 1.8758, 0.0415],
    [0.0557, -0.2040, 1.0570],
])
# XYZ that maps to linear RGB (1, 1, 1) under the matrix above
SRGB_WHITE_XYZ = np.linalg.solve(XYZ_TO_SRGB, np.ones(3))

_TABLE = "cie1931_2deg_d65_10nm.csv"


@dataclass(frozen=True, eq=False)
class ColorMatchingTable:
    """CIE 1931 2-degree colour matching functions and the D65 illuminant."""

    wavelengths: np.ndarray
    xbar: np.ndarray
    ybar: np.ndarray
    zbar: np.ndarray
    illuminant: np.ndarray

    def __post_init__(self) -> None:
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        if np.any(np.diff(wl) <= 0):
            raise ValueError("colour-matching wavelengths must be strictly increasing")
        for name in ("xbar", "ybar", "zbar", "illuminant"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != wl.shape:
                raise ShapeMismatchError(f"{name} does not match the wavelength grid")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "wavelengths", wl)

    @classmethod
    def default(cls) -> ColorMatchingTable:
        """The packaged 380-780 nm table at 10 nm spacing."""
        with resources.files("msfadesign.data").joinpath(_TABLE).open("r") as fh:
            table = np.loadtxt(fh, delimiter=",", comments="#", skiprows=2)
        return cls(*table.T)

    def weights(self, wavelengths) -> np.ndarray:
        """``(L, 3)`` XYZ weights on ``wavelengths``, white-normalized.

        Folds illuminant, colour matching functions and band widths together;
        a unit-transmittance spectrum maps exactly to :data:`SRGB_WHITE_XYZ`.
        """
        wl = np.asarray(wavelengths, dtype=np.float64)
        if wl[0] < self.wavelengths[0] or wl[-1] > self.wavelengths[-1]:
            raise ValueError(
                f"cube wavelengths {wl[0]:g}-{wl[-1]:g} nm are outside the colour-matching "
                f"table range {self.wavelengths[0]:g}-{self.wavelengths[-1]:g} nm"
            )
        step = np.gradient(wl) if wl.size > 1 else np.ones(1)
        illum = np.interp(wl, self.wavelengths, self.illuminant) * step
        cmf = np.stack([np.interp(wl, self.wavelengths, c) for c in (self.xbar, self.ybar, self.zbar)], axis=1)
        raw = cmf * illum[:, None]
        white = raw.sum(axis=0)
        if np.any(white <= 0):
            raise ValueError("colour-matching functions vanish on this wavelength grid")
        return raw * (SRGB_WHITE_XYZ / white)[None, :]


def srgb_gamma(linear: np.ndarray) -> np.ndarray:
    a = np.asarray(linear, dtype=np.float64)
    return np.where(a <= 0.0031308, 12.92 * a, 1.055 * np.power(np.maximum(a, 0.0031308), 1 / 2.4) - 0.055)


def spectra_to_linear_rgb(spectra: np.ndarray, wavelengths, cmf: ColorMatchingTable) -> np.ndarray:
    """Linear (pre-gamma, unclamped) sRGB of ``(..., L)`` transmittance spectra.

    Sums run in fixed band order per pixel, so a spectrum renders to the same
    bits whatever array it arrives in.
    """
    spectra = np.asarray(spectra, dtype=np.float64)
    weights = cmf.weights(wavelengths)
    xyz = np.zeros(spectra.shape[:-1] + (3,))
    for j in range(weights.shape[0]):
        xyz += spectra[..., j, None] * weights[j]
    rgb = np.zeros_like(xyz)
    for j in range(3):
        rgb += xyz[..., j, None] * XYZ_TO_SRGB[:, j]
    return rgb


def spectra_to_srgb(spectra: np.ndarray, wavelengths, cmf: ColorMatchingTable) -> np.ndarray:
    """Gamma-encoded sRGB in ``[0, 1]``; clamping happens before encoding."""
    lin = np.clip(spectra_to_linear_rgb(spectra, wavelengths, cmf), 0.0, 1.0)
    return np.clip(srgb_gamma(lin), 0.0, 1.0)


def cube_to_srgb(cube: SpectralCube, cmf: ColorMatchingTable | None = None) -> np.ndarray:
    """Render ``cube`` as an ``H x W x 3`` sRGB image under D65."""
    cmf = ColorMatchingTable.default() if cmf is None else cmf
    return spectra_to_srgb(cube.data, cube.wavelengths, cmf)


def msfa_patch_colors(msfa: MsfaBlock, cmf: ColorMatchingTable | None = None,
                      wavelengths=None) -> np.ndarray:
    """sRGB colour of each filter, treating its sensitivity as a transmittance.

    Returns ``M x 3``. Wavelengths come from the block unless given.
    """
    cmf = ColorMatchingTable.default() if cmf is None else cmf
    wl = msfa.wavelengths if wavelengths is None else wavelengths
    if wl is None:
        raise ValueError("MSFA has no wavelength grid; pass wavelengths explicitly")
    return spectra_to_srgb(msfa.sensitivities, wl, cmf)


def _psnr(reference: np.ndarray, estimate: np.ndarray, peak: float) -> float:
    if reference.shape != estimate.shape:
        raise ShapeMismatchError(f"shape mismatch: {reference.shape} vs {estimate.shape}")
    mse = float(np.mean((reference - estimate) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)


def psnr_msi(reference: SpectralCube, estimate: SpectralCube, peak: float = 1.0) -> float:
    """PSNR in dB over every sample; ``inf`` for identical cubes."""
    return _psnr(reference.data, estimate.data, peak)


def psnr_rgb(reference: np.ndarray, estimate: np.ndarray, peak: float = 1.0) -> float:
    """PSNR in dB over gamma-encoded RGB channels."""
    return _psnr(np.asarray(reference, dtype=np.float64), np.asarray(estimate, dtype=np.float64), peak)


def average_spectrum(cube: SpectralCube) -> np.ndarray:
    return cube.data.reshape(-1, cube.bands).mean(axis=0)


def write_ppm(rgb: np.ndarray, path) -> None:
    """Binary 8-bit PPM (P6) from an ``H x W x 3`` array in ``[0, 1]``."""
    arr = np.asarray(rgb, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeMismatchError(f"expected H x W x 3 image, got {arr.shape}")
    pixels = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 file written by :func:`write_ppm`; returns ``uint8`` ``H x W x 3``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 image")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(blob[pos + 1:], dtype=np.uint8).reshape(h, w, 3)


def write_sensitivity_csv(msfa: MsfaBlock, wavelengths, path) -> None:
    """``band_nm, filter_1..filter_M``, one row per band."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["band_nm"] + [f"filter_{m + 1}" for m in range(msfa.size)])
        for j, wl in enumerate(wavelengths):
            out.writerow([repr(float(wl))] + [repr(float(v)) for v in msfa.sensitivities[:, j]])


def write_average_spectrum_csv(reference: SpectralCube, estimate: SpectralCube, path) -> None:
    """``band_nm, reference, estimate`` band means."""
    ref, est = average_spectrum(reference), average_spectrum(estimate)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["band_nm", "reference", "estimate"])
        for wl, a, b in zip(reference.wavelengths, ref, est):
            out.writerow([repr(float(wl)), repr(float(a)), repr(float(b))])
