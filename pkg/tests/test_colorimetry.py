import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msfadesign import (BlockGeometry, ColorMatchingTable, MsfaBlock, SpectralCube, average_spectrum,
                        cube_to_srgb, msfa_patch_colors, psnr_msi, psnr_rgb)
from msfadesign.colorimetry import (SRGB_WHITE_XYZ, spectra_to_linear_rgb, srgb_gamma, read_ppm,
                                    write_average_spectrum_csv, write_ppm, write_sensitivity_csv)
from msfadesign.cube import ShapeMismatchError

from conftest import f32_cube

WL = np.arange(420.0, 721.0, 10.0)


@pytest.fixture(scope="module")
def cmf():
    return ColorMatchingTable.default()


def test_table_contents(cmf):
    assert cmf.wavelengths[0] == 380 and cmf.wavelengths[-1] == 780 and cmf.wavelengths.size == 41
    # D65 is tabulated relative to 100 at 560 nm; ybar peaks near 555 nm
    assert cmf.illuminant[cmf.wavelengths == 560][0] == pytest.approx(100.0)
    assert 550 <= cmf.wavelengths[np.argmax(cmf.ybar)] <= 560


@pytest.mark.parametrize("wl", [WL, np.linspace(400, 700, 16), np.array([450.0, 555.0, 640.0])])
def test_unit_transmittance_is_linear_white(cmf, wl):
    lin = spectra_to_linear_rgb(np.ones((2, 2, wl.size)), wl, cmf)
    np.testing.assert_allclose(lin, 1.0, rtol=0, atol=1e-6)
    rgb = cube_to_srgb(SpectralCube(np.ones((2, 2, wl.size)), wl), cmf)
    np.testing.assert_allclose(rgb, 1.0, atol=1e-6)


def test_white_point_luminance(cmf):
    assert (np.ones(WL.size) @ cmf.weights(WL))[1] == pytest.approx(1.0, abs=1e-4)
    np.testing.assert_allclose(np.ones(WL.size) @ cmf.weights(WL), SRGB_WHITE_XYZ, rtol=1e-12)


def test_zero_transmittance_is_black(cmf):
    assert not cube_to_srgb(SpectralCube(np.zeros((1, 3, WL.size)), WL), cmf).any()


def test_narrow_550_is_green(cmf):
    spectrum = np.zeros(WL.size)
    spectrum[WL == 550] = 1.0
    rgb = cube_to_srgb(SpectralCube(spectrum.reshape(1, 1, -1), WL), cmf)[0, 0]
    assert rgb[1] > rgb[0] and rgb[1] > rgb[2]
    # the tabulated observer at 550 nm already orders Y above X and Z
    row = cmf.wavelengths == 550
    assert cmf.ybar[row] > cmf.xbar[row] > cmf.zbar[row]


def test_gamma_is_continuous_and_monotone():
    a = np.linspace(0, 1, 2001)
    enc = srgb_gamma(a)
    assert np.all(np.diff(enc) > 0)
    assert srgb_gamma(0.0031308) == pytest.approx(12.92 * 0.0031308, abs=1e-6)
    assert srgb_gamma(1.0) == pytest.approx(1.0, abs=1e-12)


def test_out_of_range_grid_rejected(cmf):
    with pytest.raises(ValueError, match="outside"):
        cube_to_srgb(SpectralCube(np.ones((1, 1, 3)), [350.0, 500.0, 600.0]), cmf)


def test_output_is_clamped(cmf):
    bright = SpectralCube(np.full((1, 2, WL.size), 3.0), WL)
    rgb = cube_to_srgb(bright, cmf)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0


# PSNR ---------------------------------------------------------------------------

def test_psnr_msi_half_intensity():
    ref = SpectralCube(np.ones((4, 4, 3)), [1, 2, 3])
    est = SpectralCube(np.full((4, 4, 3), 0.5), [1, 2, 3])
    assert abs(psnr_msi(ref, est) - 6.0206) < 1e-3


def test_psnr_rgb_one_channel_off():
    ref = np.full((5, 5, 3), 0.5)
    est = ref.copy()
    est[:, :, 0] += 0.1
    assert abs(psnr_rgb(ref, est) - 24.771) < 1e-3


def test_psnr_identical_is_inf(rng):
    cube = f32_cube(rng, 3, 3, 2)
    assert psnr_msi(cube, cube) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        psnr_rgb(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), alpha=st.floats(1.01, 50))
def test_scaling_error_lowers_psnr(seed, alpha):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(size=(4, 4, 3))
    err = rng.normal(scale=0.01, size=ref.shape)
    drop = psnr_rgb(ref, ref + err) - psnr_rgb(ref, ref + alpha * err)
    assert drop == pytest.approx(20 * math.log10(alpha), abs=1e-9)


# summaries ----------------------------------------------------------------------

def test_average_spectrum_cases(rng):
    assert np.all(average_spectrum(SpectralCube(np.full((3, 2, 4), 0.3), [1, 2, 3, 4])) == 0.3)
    s1, s2 = rng.uniform(size=3), rng.uniform(size=3)
    two = SpectralCube(np.stack([s1, s2]).reshape(1, 2, 3), [1, 2, 3])
    np.testing.assert_allclose(average_spectrum(two), (s1 + s2) / 2, rtol=1e-15)


def test_average_of_block_means(rng):
    cube = f32_cube(rng, 8, 6, 4)
    blocks = cube.data.reshape(4, 2, 3, 2, 4).mean(axis=(1, 3)).reshape(-1, 4)
    np.testing.assert_allclose(blocks.mean(axis=0), average_spectrum(cube), atol=1e-12)


def test_average_commutes_with_band_maps(rng):
    cube = f32_cube(rng, 4, 4, 3)
    a = rng.normal(size=(3, 3))
    mapped = SpectralCube(cube.data @ a.T, cube.wavelengths)
    np.testing.assert_allclose(average_spectrum(mapped), a @ average_spectrum(cube), atol=1e-12)


def test_patch_colors_share_cube_path(cmf, rng):
    s = rng.uniform(size=(4, WL.size))
    s[0], s[1] = 1.0, 0.0
    msfa = MsfaBlock(BlockGeometry(2, 2), s, WL)
    colors = msfa_patch_colors(msfa, cmf)
    np.testing.assert_allclose(colors[0], 1.0, atol=1e-6)
    assert not colors[1].any()
    for m in range(4):
        single = cube_to_srgb(SpectralCube(s[m].reshape(1, 1, -1), WL), cmf)[0, 0]
        assert np.array_equal(colors[m], single)


def test_patch_colors_need_wavelengths(rng):
    with pytest.raises(ValueError, match="wavelength"):
        msfa_patch_colors(MsfaBlock(BlockGeometry(1, 1), [[0.5, 0.5]]))


# exports ------------------------------------------------------------------------

def test_ppm_round_trip(tmp_path, rng):
    rgb = rng.uniform(size=(5, 7, 3))
    write_ppm(rgb, tmp_path / "x.ppm")
    blob = (tmp_path / "x.ppm").read_bytes()
    assert blob.startswith(b"P6\n7 5\n255\n")
    np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), np.round(rgb * 255).astype(np.uint8))


def test_csv_exports(tmp_path, rng):
    msfa = MsfaBlock(BlockGeometry(1, 2), rng.uniform(size=(2, 4)))
    wl = [450.0, 500.0, 550.0, 600.0]
    write_sensitivity_csv(msfa, wl, tmp_path / "s.csv")
    table = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "band_nm,filter_1,filter_2"
    np.testing.assert_array_equal(table[:, 0], wl)
    np.testing.assert_array_equal(table[:, 1:], msfa.sensitivities.T)

    ref = f32_cube(rng, 2, 2, 4, wl=wl)
    write_average_spectrum_csv(ref, ref, tmp_path / "a.csv")
    table = np.loadtxt(tmp_path / "a.csv", delimiter=",", skiprows=1)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "band_nm,reference,estimate"
    np.testing.assert_array_equal(table[:, 1], average_spectrum(ref))
