"""Header + raw payload file formats for cubes, MSFA blocks and Wiener matrices.

Every object is written as two files sharing a stem: ``<stem>.hdr`` holds
``key = value`` lines and ``<stem>.raw`` holds little-endian float32 samples.
Paths may be given with or without the ``.hdr`` suffix.

Cube payloads are band-sequential (band 0's ``H x W`` samples row-major, then
band 1, ...). Raw samples are divided by the header ``scale`` on load.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .cube import BlockGeometry, MosaickedImage, MsfaBlock, SpectralCube

_DTYPE = np.dtype("<f4")


class CubeFormatError(ValueError):
    """Malformed header or payload."""


def _paths(path) -> tuple[Path, Path]:
    p = Path(os.fspath(path))
    stem = p.with_suffix("") if p.suffix in (".hdr", ".raw") else p
    return stem.with_name(stem.name + ".hdr"), stem.with_name(stem.name + ".raw")


def read_header(path) -> dict[str, str]:
    hdr, _ = _paths(path)
    meta: dict[str, str] = {}
    with open(hdr, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CubeFormatError(f"{hdr}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise CubeFormatError(f"{hdr}:{lineno}: empty key")
            meta[key] = value
    if meta.get("byte_order", "little") != "little":
        raise CubeFormatError(f"{hdr}: byte_order must be 'little', got {meta['byte_order']!r}")
    if meta.get("dtype", "float32") != "float32":
        raise CubeFormatError(f"{hdr}: dtype must be 'float32', got {meta['dtype']!r}")
    return meta


def _int(meta: dict, key: str, hdr) -> int:
    try:
        value = int(meta[key])
    except KeyError:
        raise CubeFormatError(f"{hdr}: missing header key {key!r}") from None
    except ValueError:
        raise CubeFormatError(f"{hdr}: {key!r} must be an integer, got {meta[key]!r}") from None
    if value < 1:
        raise CubeFormatError(f"{hdr}: {key!r} must be positive, got {value}")
    return value


def _float(meta: dict, key: str, hdr, default=None) -> float:
    if key not in meta:
        if default is None:
            raise CubeFormatError(f"{hdr}: missing header key {key!r}")
        return default
    try:
        return float(meta[key])
    except ValueError:
        raise CubeFormatError(f"{hdr}: {key!r} must be a number, got {meta[key]!r}") from None


def _wavelengths(meta: dict, hdr) -> np.ndarray | None:
    if "wavelengths" not in meta:
        return None
    try:
        return np.array([float(v) for v in meta["wavelengths"].split(",")])
    except ValueError:
        raise CubeFormatError(f"{hdr}: unparsable wavelengths {meta['wavelengths']!r}") from None


def _read_payload(raw: Path, count: int) -> np.ndarray:
    values = np.fromfile(raw, dtype=_DTYPE)
    if values.size != count:
        raise CubeFormatError(
            f"{raw}: header declares {count} samples but payload holds {values.size}"
        )
    return values


def _write(path, meta: dict[str, str], payload: np.ndarray) -> None:
    hdr, raw = _paths(path)
    lines = [f"{k} = {v}" for k, v in meta.items()]
    lines += ["byte_order = little", "dtype = float32"]
    with open(hdr, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    np.ascontiguousarray(payload, dtype=_DTYPE).tofile(raw)


def _fmt_wavelengths(wl) -> str:
    return ",".join(repr(float(v)) for v in wl)


def load_cube(path, check_range: bool = True) -> SpectralCube:
    """Load a cube and normalize it by the header scale.

    Raises :class:`CubeFormatError` on malformed headers or payload size
    mismatches, and :class:`ValueError` if normalized samples leave ``[0, 1]``
    or the wavelength grid is not strictly increasing. Pass
    ``check_range=False`` for reconstructed (unclamped) estimates.
    """
    hdr, raw = _paths(path)
    meta = read_header(hdr)
    h, w, nb = (_int(meta, k, hdr) for k in ("height", "width", "bands"))
    scale = _float(meta, "scale", hdr, default=1.0)
    wl = _wavelengths(meta, hdr)
    if wl is None:
        raise CubeFormatError(f"{hdr}: missing header key 'wavelengths'")
    if wl.size != nb:
        raise CubeFormatError(f"{hdr}: {wl.size} wavelengths listed for {nb} bands")
    values = _read_payload(raw, h * w * nb)
    data = values.reshape(nb, h, w).transpose(1, 2, 0).astype(np.float64) / scale
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{raw}: payload contains non-finite samples")
    lo, hi = float(data.min()), float(data.max())
    if check_range and (lo < 0.0 or hi > 1.0):
        raise ValueError(
            f"{raw}: normalized samples span [{lo:g}, {hi:g}], outside [0, 1] (scale = {scale:g})"
        )
    return SpectralCube(data, wl, scale)


def save_cube(cube: SpectralCube, path) -> None:
    """Write ``cube`` so that :func:`load_cube` reproduces it bit-exactly.

    Exactness holds for samples representable as ``float32 / scale``, which is
    the case for any cube that came from :func:`load_cube`.
    """
    meta = {
        "height": str(cube.height),
        "width": str(cube.width),
        "bands": str(cube.bands),
        "wavelengths": _fmt_wavelengths(cube.wavelengths),
        "scale": repr(cube.scale),
    }
    _write(path, meta, (cube.data * cube.scale).transpose(2, 0, 1))


def save_mosaic(img: MosaickedImage, path) -> None:
    """Write a mosaicked image in cube layout with a single band."""
    meta = {
        "height": str(img.height),
        "width": str(img.width),
        "bands": "1",
        "wavelengths": "0.0",
        "scale": "1.0",
        "rows": str(img.geometry.rows),
        "cols": str(img.geometry.cols),
    }
    _write(path, meta, img.data)


def load_mosaic(path) -> MosaickedImage:
    """Load a mosaicked image; samples only need to be finite."""
    hdr, raw = _paths(path)
    meta = read_header(hdr)
    h, w, nb = (_int(meta, k, hdr) for k in ("height", "width", "bands"))
    if nb != 1:
        raise CubeFormatError(f"{hdr}: a mosaicked image has 1 band, header says {nb}")
    geometry = BlockGeometry(_int(meta, "rows", hdr), _int(meta, "cols", hdr))
    scale = _float(meta, "scale", hdr, default=1.0)
    data = _read_payload(raw, h * w).reshape(h, w).astype(np.float64) / scale
    return MosaickedImage(data, geometry)


def save_msfa(msfa: MsfaBlock, path) -> None:
    meta = {
        "rows": str(msfa.geometry.rows),
        "cols": str(msfa.geometry.cols),
        "bands": str(msfa.bands),
    }
    if msfa.wavelengths is not None:
        meta["wavelengths"] = _fmt_wavelengths(msfa.wavelengths)
    _write(path, meta, msfa.sensitivities)


def load_msfa(path) -> MsfaBlock:
    hdr, raw = _paths(path)
    meta = read_header(hdr)
    rows, cols, nb = (_int(meta, k, hdr) for k in ("rows", "cols", "bands"))
    wl = _wavelengths(meta, hdr)
    if wl is not None and wl.size != nb:
        raise CubeFormatError(f"{hdr}: {wl.size} wavelengths listed for {nb} bands")
    geometry = BlockGeometry(rows, cols)
    values = _read_payload(raw, geometry.size * nb).reshape(geometry.size, nb)
    return MsfaBlock(geometry, values.astype(np.float64), wl)


def save_wiener(wiener, path) -> None:
    """Write a :class:`~msfadesign.wiener.WienerMatrix` (``LM x M``, row-major)."""
    meta = {
        "rows": str(wiener.geometry.rows),
        "cols": str(wiener.geometry.cols),
        "bands": str(wiener.bands),
        "ridge": repr(float(wiener.ridge)),
    }
    if wiener.wavelengths is not None:
        meta["wavelengths"] = _fmt_wavelengths(wiener.wavelengths)
    _write(path, meta, wiener.matrix)


def load_wiener(path):
    from .wiener import WienerMatrix

    hdr, raw = _paths(path)
    meta = read_header(hdr)
    rows, cols, nb = (_int(meta, k, hdr) for k in ("rows", "cols", "bands"))
    ridge = _float(meta, "ridge", hdr, default=0.0)
    geometry = BlockGeometry(rows, cols)
    m = geometry.size
    wl = _wavelengths(meta, hdr)
    if wl is not None and wl.size != nb:
        raise CubeFormatError(f"{hdr}: {wl.size} wavelengths listed for {nb} bands")
    values = _read_payload(raw, nb * m * m).reshape(nb * m, m)
    return WienerMatrix(geometry, nb, values.astype(np.float64), ridge, wl)

