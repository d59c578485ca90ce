import itertools

import numpy as np
import pytest

from msfadesign import (BlockGeometry, MsfaBlock, SpectralCube, materialize_block_operator,
                        vectorize_block)
from msfadesign.cube import to_blocks

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def f32_cube(rng, h, w, nb, wl=None):
    """Random cube whose samples are exactly float32-representable."""
    data = rng.uniform(0.0, 1.0, size=(h, w, nb)).astype(np.float32).astype(np.float64)
    wl = np.linspace(420.0, 720.0, nb) if wl is None else wl
    return SpectralCube(data, wl)


def random_block(rng, rows, cols, nb, low=0.0):
    return MsfaBlock(BlockGeometry(rows, cols), rng.uniform(low, 1.0, size=(rows * cols, nb)))


# oracles ---------------------------------------------------------------------

def dense_mosaic(cube, msfa):
    """Oracle: materialize Phi = I_B kron phi and multiply the stacked image vector."""
    g = msfa.geometry
    gr, gc = cube.height // g.rows, cube.width // g.cols
    u = np.concatenate([vectorize_block(cube, br, bc, g) for br in range(gr) for bc in range(gc)])
    phi = np.kron(np.eye(gr * gc), materialize_block_operator(msfa))
    v = phi @ u
    img = np.empty((cube.height, cube.width))
    for b, (br, bc) in enumerate((br, bc) for br in range(gr) for bc in range(gc)):
        img[br * g.rows:(br + 1) * g.rows, bc * g.cols:(bc + 1) * g.cols] = \
            v[b * g.size:(b + 1) * g.size].reshape(g.rows, g.cols)
    return img


def dense_demosaic(img, w):
    """Oracle: materialize W = I_B kron W_block and apply it to the stacked measurements."""
    g = w.geometry
    gr, gc = img.height // g.rows, img.width // g.cols
    v = np.concatenate([img.data[br * g.rows:(br + 1) * g.rows, bc * g.cols:(bc + 1) * g.cols].ravel()
                        for br in range(gr) for bc in range(gc)])
    u = np.kron(np.eye(gr * gc), w.matrix) @ v
    out = np.empty((img.height, img.width, w.bands))
    step = g.size * w.bands
    for b, (br, bc) in enumerate((br, bc) for br in range(gr) for bc in range(gc)):
        out[br * g.rows:(br + 1) * g.rows, bc * g.cols:(bc + 1) * g.cols] = \
            u[b * step:(b + 1) * step].reshape(g.rows, g.cols, w.bands)
    return out


def grid_search_minimum(cube, w, basis, geometry, step=0.05):
    """Oracle: direct reduced objective at every grid point of [0, 1]^(M*L), M = L = 2."""
    levels = np.round(np.arange(0.0, 1.0 + 1e-9, step), 10)
    grid = np.array(list(itertools.product(levels, repeat=4)))  # (P, 4): phi row-major
    blocks = to_blocks(cube.data, geometry).reshape(-1, 2, 2)  # (B, pixel, band)
    v = np.einsum("pml,bml->pbm", grid.reshape(-1, 2, 2), blocks)
    recon = (v @ w.matrix.T).reshape(len(grid), -1, 2, 2)
    resid = (blocks[None] - recon) @ basis.vectors.T
    return np.sqrt(np.sum(resid ** 2, axis=(1, 2, 3))).min()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
