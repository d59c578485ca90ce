import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from msfadesign import BlockGeometry, MsfaBlock, load_cube, load_msfa, save_msfa
from msfadesign.cli import main
from msfadesign.io import load_mosaic


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def tiny(tmp_path):
    """Small rank-3 training cube on disk."""
    stem = tmp_path / "train"
    assert run("synth", "--height", 8, "--width", 8, "--bands", 5, "--rank", 3, "--seed", 1,
               "--out", stem) == 0
    return stem


def read_bytes(*paths):
    return [p.read_bytes() for p in paths]


# synth ----------------------------------------------------------------------------

def test_synth_rank_structure(tmp_path):
    stem = tmp_path / "c"
    assert run("synth", "--height", 16, "--width", 16, "--bands", 10, "--rank", 3,
               "--out", stem) == 0
    cube = load_cube(stem)
    spectra = cube.data.reshape(-1, 10)
    vals = np.sort(np.linalg.eigvalsh(spectra.T @ spectra / len(spectra)))[::-1]
    assert vals[3] < 1e-10 * vals[0]
    assert vals[2] > 1e-6 * vals[0]
    meta = json.loads((tmp_path / "c.manifest.json").read_text())
    assert meta["command"] == "synth" and "3-dimensional" in meta["parameters"]["structure"]


def test_synth_rank_one_is_proportional(tmp_path):
    stem = tmp_path / "c"
    run("synth", "--height", 8, "--width", 8, "--bands", 6, "--rank", 1, "--out", stem)
    spectra = load_cube(stem).data.reshape(-1, 6)
    ref = spectra[np.argmax(spectra.sum(axis=1))]
    ratios = spectra / ref
    np.testing.assert_allclose(ratios, np.broadcast_to(ratios[:, :1], ratios.shape), rtol=1e-6)


def test_synth_same_seed_same_file(tmp_path):
    for name in ("a", "b"):
        run("synth", "--height", 6, "--width", 6, "--bands", 4, "--rank", 2, "--seed", 9,
            "--noise", 0.01, "--out", tmp_path / name)
    assert read_bytes(tmp_path / "a.raw", tmp_path / "a.hdr") == \
        read_bytes(tmp_path / "b.raw", tmp_path / "b.hdr")


def test_synth_creates_parent_directories(tmp_path):
    stem = tmp_path / "nested" / "deeper" / "c"
    assert run("synth", "--height", 4, "--width", 4, "--bands", 3, "--rank", 2, "--out", stem) == 0
    assert load_cube(stem).shape == (4, 4, 3)


@pytest.mark.parametrize("bad", [["--height", 0], ["--rank", 9], ["--bands", -1]])
def test_synth_invalid_dimensions(tmp_path, bad):
    argv = {"--height": 4, "--width": 4, "--bands": 4, "--rank": 2}
    argv[bad[0]] = bad[1]
    flat = [x for kv in argv.items() for x in kv]
    assert run("synth", *flat, "--out", tmp_path / "c") == 1


# optimize -------------------------------------------------------------------------

def test_single_iteration_trace(tiny, tmp_path):
    out = tmp_path / "opt"
    assert run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 1,
               "--out", out) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,reduced_objective,full_rmse,seconds"
    assert len(lines) == 2
    for name in ("msfa.hdr", "msfa.raw", "wiener.hdr", "wiener.raw", "manifest.json"):
        assert (out / name).exists()
    meta = json.loads((out / "manifest.json").read_text())
    assert meta["parameters"]["k"] == 3 and meta["parameters"]["iters"] == 1
    assert any(k.endswith("train.raw") for k in meta["inputs"])


def test_optimize_defaults_in_manifest(tiny, tmp_path):
    out = tmp_path / "opt"
    # 8x8 training cube, 4x4 default geometry, K must be reduced to the cube rank
    assert run("optimize", "--train", tiny, "--k", 3, "--iters", 2, "--out", out) == 0
    params = json.loads((out / "manifest.json").read_text())["parameters"]
    assert (params["rows"], params["cols"]) == (4, 4)
    assert load_msfa(out / "msfa").geometry == BlockGeometry(4, 4)


def test_rerun_is_byte_identical(tiny, tmp_path):
    out = tmp_path / "opt"
    run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 4,
        "--seed", 5, "--out", out)
    names = ["msfa.hdr", "msfa.raw", "wiener.hdr", "wiener.raw", "trace.csv"]
    first = read_bytes(*(out / n for n in names))
    shutil.copy(out / "manifest.json", tmp_path / "saved.json")
    assert run("rerun", tmp_path / "saved.json") == 0
    assert read_bytes(*(out / n for n in names)) == first


def test_rerun_rejects_changed_input(tiny, tmp_path):
    out = tmp_path / "opt"
    run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 1, "--out", out)
    raw = tiny.with_name("train.raw")
    raw.write_bytes(raw.read_bytes()[::-1])
    assert run("rerun", out / "manifest.json") == 1


def test_timing_flag_fills_seconds(tiny, tmp_path):
    out = tmp_path / "opt"
    run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 2,
        "--timing", "--out", out)
    rows = [line.split(",") for line in (out / "trace.csv").read_text().splitlines()[1:]]
    assert all(float(r[3]) >= 0 for r in rows)


def test_singular_without_ridge_exits_2(tmp_path, capsys):
    from msfadesign import SpectralCube, save_cube
    data = np.zeros((4, 4, 2))
    data[:, :, 0] = 0.5
    save_cube(SpectralCube(data, [500.0, 600.0]), tmp_path / "flat")
    (tmp_path / "basis.csv").write_text("# one spectrum\n1.0,0.0\n")
    code = run("optimize", "--train", tmp_path / "flat", "--rows", 2, "--cols", 2, "--k", 1,
               "--iters", 1, "--ridge", 0, "--basis", tmp_path / "basis.csv", "--out", tmp_path / "o")
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_bad_inputs_exit_1(tiny, tmp_path, capsys):
    assert run("optimize", "--train", tmp_path / "missing", "--out", tmp_path / "o") == 1
    assert run("optimize", "--train", tiny, "--rows", 3, "--cols", 3, "--k", 3,
               "--out", tmp_path / "o") == 1
    assert run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 7,
               "--out", tmp_path / "o") == 1
    with pytest.raises(SystemExit) as exc:
        run("optimize", "--rows", 2)
    assert exc.value.code == 1


# mosaic / demosaic ----------------------------------------------------------------

def test_mosaic_demosaic_shape(tiny, tmp_path):
    out = tmp_path / "opt"
    run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 2, "--out", out)
    assert run("mosaic", "--cube", tiny, "--msfa", out / "msfa", "--out", tmp_path / "v") == 0
    assert load_mosaic(tmp_path / "v").data.shape == (8, 8)
    assert run("demosaic", "--mosaic", tmp_path / "v", "--wiener", out / "wiener",
               "--out", tmp_path / "est") == 0
    est = load_cube(tmp_path / "est", check_range=False)
    assert est.shape == load_cube(tiny).shape
    np.testing.assert_array_equal(est.wavelengths, load_cube(tiny).wavelengths)
    assert (tmp_path / "v.manifest.json").exists() and (tmp_path / "est.manifest.json").exists()


def test_band_mismatch_names_counts(tiny, tmp_path, capsys):
    save_msfa(MsfaBlock(BlockGeometry(2, 2), np.full((4, 3), 0.5)), tmp_path / "m")
    assert run("mosaic", "--cube", tiny, "--msfa", tmp_path / "m", "--out", tmp_path / "v") == 1
    err = capsys.readouterr().err
    assert "5 bands" in err and "3" in err


def test_scalar_identity_chain_via_files(tmp_path):
    cube = tmp_path / "c"
    run("synth", "--height", 6, "--width", 4, "--bands", 1, "--rank", 1, "--seed", 2, "--out", cube)
    save_msfa(MsfaBlock(BlockGeometry(1, 1), [[1.0]], [420.0]), tmp_path / "m")
    assert run("wiener", "--train", cube, "--msfa", tmp_path / "m", "--ridge", 0,
               "--out", tmp_path / "w") == 0
    run("mosaic", "--cube", cube, "--msfa", tmp_path / "m", "--out", tmp_path / "v")
    run("demosaic", "--mosaic", tmp_path / "v", "--wiener", tmp_path / "w", "--out", tmp_path / "e")
    assert (tmp_path / "e.raw").read_bytes() == (tmp_path / "c.raw").read_bytes()
    assert load_cube(tmp_path / "e").data.tobytes() == load_cube(cube).data.tobytes()


# evaluate -------------------------------------------------------------------------

def test_evaluate_identical_prints_inf(tiny, tmp_path, capsys):
    assert run("evaluate", "--reference", tiny, "--estimate", tiny, "--out", tmp_path / "ev") == 0
    out = capsys.readouterr().out
    assert "psnr_msi_db = inf" in out and "psnr_rgb_db = inf" in out
    table = np.loadtxt(tmp_path / "ev" / "average_spectrum.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(table[:, 0], load_cube(tiny).wavelengths)
    for name in ("reference.ppm", "estimate.ppm", "manifest.json"):
        assert (tmp_path / "ev" / name).exists()


def test_evaluate_chain_outputs(tiny, tmp_path, capsys):
    out = tmp_path / "opt"
    run("optimize", "--train", tiny, "--rows", 2, "--cols", 2, "--k", 3, "--iters", 3, "--out", out)
    capsys.readouterr()
    assert run("evaluate", "--reference", tiny, "--msfa", out / "msfa", "--wiener", out / "wiener",
               "--patch-size", 4, "--out", tmp_path / "ev") == 0
    captured = capsys.readouterr()
    assert "caution" in captured.err
    psnr = float(captured.out.split("psnr_msi_db = ")[1].split()[0])
    assert psnr > 20
    header = (tmp_path / "ev" / "sensitivities.csv").read_text().splitlines()[0]
    assert header == "band_nm,filter_1,filter_2,filter_3,filter_4"
    blob = (tmp_path / "ev" / "msfa_patches.ppm").read_bytes()
    assert blob.startswith(b"P6\n8 8\n255\n")


def test_evaluate_shape_mismatch(tiny, tmp_path):
    other = tmp_path / "other"
    run("synth", "--height", 4, "--width", 8, "--bands", 5, "--rank", 2, "--out", other)
    assert run("evaluate", "--reference", tiny, "--estimate", other, "--out", tmp_path / "ev") == 1
    assert run("evaluate", "--reference", tiny, "--out", tmp_path / "ev") == 1


# process-level --------------------------------------------------------------------

def test_entry_point_with_thread_cap(tiny, tmp_path):
    env = dict(os.environ, MSFA_THREADS="1")
    proc = subprocess.run([sys.executable, "-m", "msfadesign.cli", "optimize", "--train", str(tiny),
                           "--rows", "2", "--cols", "2", "--k", "3", "--iters", "2",
                           "--out", str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "final_rmse" in proc.stdout
    env["MSFA_THREADS"] = "many"
    proc = subprocess.run([sys.executable, "-m", "msfadesign.cli", "rerun",
                           str(tmp_path / "o" / "manifest.json")], env=env, capture_output=True, text=True)
    assert proc.returncode == 1 and "MSFA_THREADS" in proc.stderr
