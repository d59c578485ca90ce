"""Command-line front end: ``msfa <command> ...``.

Exit status is 0 on success, 1 for invalid input and 2 for numerical failure
(a singular Wiener system with the ridge disabled). Every command writes a
JSON manifest next to its outputs; ``msfa rerun <manifest>`` repeats the run.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .colorimetry import (ColorMatchingTable, cube_to_srgb, msfa_patch_colors, psnr_msi, psnr_rgb,
                          write_average_spectrum_csv, write_ppm, write_sensitivity_csv)
from .cube import BlockGeometry, MsfaBlock, ShapeMismatchError
from .io import (load_cube, load_mosaic, load_msfa, load_wiener, save_cube, save_mosaic,
                 save_msfa, save_wiener)
from .mosaic import mosaic
from .optimize import OptimizerConfig, build_eigenbasis, load_spectral_table, optimize
from .synth import low_rank_cube
from .wiener import demosaic, estimate_autocorrelation, relative_ridge, wiener_from

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".hdr", ".raw") else p


def _object_files(path) -> list[Path]:
    """Header and payload of a stored object."""
    stem = _stem(path)
    return [stem.with_name(stem.name + ".hdr"), stem.with_name(stem.name + ".raw")]


def _checksums(paths) -> dict[str, str]:
    sums = {}
    for p in paths:
        for f in (_object_files(p) if Path(p).suffix not in (".csv",) else [Path(p)]):
            if f.exists():
                sums[str(f)] = _sha256(f)
    return sums


def _write_manifest(path, command: str, argv: list[str], params: dict, inputs: list) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "parameters": params,
        "version": __version__,
        "inputs": _checksums(inputs),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _side_manifest(out) -> Path:
    stem = _stem(out)
    return stem.with_name(stem.name + ".manifest.json")


def _parent(out):
    _stem(out).parent.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args, argv) -> int:
    cube = low_rank_cube(args.height, args.width, args.bands, args.rank, seed=args.seed,
                         noise=args.noise, smooth=args.smooth,
                         wavelengths=np.linspace(args.wl_min, args.wl_max, args.bands))
    save_cube(cube, _parent(args.out))
    params = {k: getattr(args, k) for k in
              ("height", "width", "bands", "rank", "seed", "noise", "smooth", "wl_min", "wl_max")}
    params["structure"] = f"spectra in a random {args.rank}-dimensional nonnegative subspace"
    _write_manifest(_side_manifest(args.out), "synth", argv, params, [])
    return 0


def cmd_optimize(args, argv) -> int:
    train = load_cube(args.train)
    geometry = BlockGeometry(args.rows, args.cols)
    geometry.grid(train.height, train.width)
    cfg = OptimizerConfig(iterations=args.iters, k=args.k, seed=args.seed, ridge=args.ridge,
                          inner_tolerance=args.inner_tol, inner_max_steps=args.inner_steps,
                          early_stop=args.early_stop)
    if args.basis:
        basis = build_eigenbasis(load_spectral_table(args.basis), args.k)
    else:
        basis = build_eigenbasis(train, args.k)
    msfa, _, trace = optimize(train, geometry, basis, cfg)

    # files hold float32; rebuild W from the stored sensitivities so both agree
    msfa = MsfaBlock(geometry, msfa.sensitivities.astype(np.float32), train.wavelengths)
    r = estimate_autocorrelation(train, geometry)
    w = wiener_from(msfa, r, relative_ridge(msfa, r, cfg.ridge) if cfg.ridge > 0 else 0.0)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_msfa(msfa, out / "msfa")
    save_wiener(w, out / "wiener")
    trace.write_csv(out / "trace.csv", timing=args.timing)
    params = {"train": args.train, "rows": args.rows, "cols": args.cols, "k": args.k,
              "iters": args.iters, "seed": args.seed, "ridge": args.ridge,
              "basis": args.basis, "inner_tol": args.inner_tol,
              "inner_steps": args.inner_steps, "early_stop": args.early_stop,
              "timing": args.timing}
    _write_manifest(out / MANIFEST, "optimize", argv, params,
                    [args.train] + ([args.basis] if args.basis else []))
    print(f"final_rmse = {trace.full_rmse[-1]:.6g} (random start {trace.initial_rmse:.6g})")
    return 0


def cmd_wiener(args, argv) -> int:
    train = load_cube(args.train)
    msfa = load_msfa(args.msfa)
    if msfa.bands != train.bands:
        raise ShapeMismatchError(
            f"band count mismatch: training cube has {train.bands} bands, MSFA has {msfa.bands}")
    r = estimate_autocorrelation(train, msfa.geometry)
    ridge = relative_ridge(msfa, r, args.ridge) if args.ridge > 0 else 0.0
    save_wiener(wiener_from(msfa, r, ridge), _parent(args.out))
    _write_manifest(_side_manifest(args.out), "wiener", argv,
                    {"train": args.train, "msfa": args.msfa, "ridge": args.ridge},
                    [args.train, args.msfa])
    return 0


def cmd_mosaic(args, argv) -> int:
    cube = load_cube(args.cube)
    msfa = load_msfa(args.msfa)
    if cube.bands != msfa.bands:
        raise ShapeMismatchError(
            f"band count mismatch: cube has {cube.bands} bands, MSFA has {msfa.bands}")
    img = mosaic(cube, msfa, args.noise, np.random.default_rng(args.seed))
    save_mosaic(img, _parent(args.out))
    _write_manifest(_side_manifest(args.out), "mosaic", argv,
                    {"cube": args.cube, "msfa": args.msfa, "noise": args.noise, "seed": args.seed},
                    [args.cube, args.msfa])
    return 0


def cmd_demosaic(args, argv) -> int:
    img = load_mosaic(args.mosaic)
    w = load_wiener(args.wiener)
    cube = demosaic(img, w)
    save_cube(cube, _parent(args.out))
    _write_manifest(_side_manifest(args.out), "demosaic", argv,
                    {"mosaic": args.mosaic, "wiener": args.wiener}, [args.mosaic, args.wiener])
    return 0


def _warn_if_trained_on(reference_path, msfa_path) -> None:
    manifest = _stem(msfa_path).parent / MANIFEST
    if not manifest.exists():
        return
    with open(manifest, encoding="utf-8") as fh:
        meta = json.load(fh)
    train = meta.get("parameters", {}).get("train")
    if train is None:
        return
    ref_sum = _checksums([reference_path])
    train_sums = {v for k, v in meta.get("inputs", {}).items() if k.startswith(str(_stem(train)))}
    if ref_sum and set(ref_sum.values()) <= train_sums:
        print("caution: the reference cube is the training cube; scores measure fit, "
              "not generalization", file=sys.stderr)


def cmd_evaluate(args, argv) -> int:
    reference = load_cube(args.reference)
    msfa = load_msfa(args.msfa) if args.msfa else None
    if args.estimate:
        estimate = load_cube(args.estimate, check_range=False)
    elif msfa is not None and args.wiener:
        if msfa.bands != reference.bands:
            raise ShapeMismatchError(
                f"band count mismatch: reference has {reference.bands} bands, MSFA has {msfa.bands}")
        estimate = demosaic(mosaic(reference, msfa), load_wiener(args.wiener), reference.wavelengths)
    else:
        raise UsageError("give --estimate, or both --msfa and --wiener")
    if reference.shape != estimate.shape:
        raise ShapeMismatchError(f"shape mismatch: reference {reference.shape} vs estimate {estimate.shape}")
    if msfa is not None:
        _warn_if_trained_on(args.reference, args.msfa)

    cmf = ColorMatchingTable.default()
    rgb_ref = cube_to_srgb(reference, cmf)
    # render the estimate on the reference grid; a demosaicked file may lack wavelengths
    rgb_est = cube_to_srgb(reference.with_data(estimate.data), cmf)
    p_msi = psnr_msi(reference, estimate)
    p_rgb = psnr_rgb(rgb_ref, rgb_est)
    print(f"psnr_msi_db = {p_msi:.4f}")
    print(f"psnr_rgb_db = {p_rgb:.4f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_average_spectrum_csv(reference, estimate, out / "average_spectrum.csv")
    write_ppm(rgb_ref, out / "reference.ppm")
    write_ppm(rgb_est, out / "estimate.ppm")
    if msfa is not None:
        write_sensitivity_csv(msfa, reference.wavelengths, out / "sensitivities.csv")
        colors = msfa_patch_colors(msfa, cmf, reference.wavelengths)
        g = msfa.geometry
        patches = colors.reshape(g.rows, g.cols, 3)
        patches = np.repeat(np.repeat(patches, args.patch_size, axis=0), args.patch_size, axis=1)
        write_ppm(patches, out / "msfa_patches.ppm")
    params = {"reference": args.reference, "estimate": args.estimate, "msfa": args.msfa,
              "wiener": args.wiener, "patch_size": args.patch_size,
              "psnr_msi_db": p_msi if np.isfinite(p_msi) else "inf",
              "psnr_rgb_db": p_rgb if np.isfinite(p_rgb) else "inf"}
    inputs = [p for p in (args.reference, args.estimate, args.msfa, args.wiener) if p]
    _write_manifest(out / MANIFEST, "evaluate", argv, params, inputs)
    return 0


def cmd_rerun(args, argv) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        meta = json.load(fh)
    for path, digest in meta.get("inputs", {}).items():
        if not Path(path).exists() or _sha256(path) != digest:
            raise UsageError(f"input {path} is missing or changed since the manifest was written")
    return main(meta["argv"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msfa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic low-rank cube")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    p.add_argument("--smooth", type=float, default=1.0, help="spatial blur of abundances, pixels")
    p.add_argument("--wl-min", type=float, default=420.0)
    p.add_argument("--wl-max", type=float, default=720.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", help="design MSFA sensitivities from a training cube")
    p.add_argument("--train", required=True)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--cols", type=int, default=4)
    p.add_argument("--k", type=int, default=8, help="eigenvectors in the reduced objective")
    p.add_argument("--iters", type=int, default=140)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ridge", type=float, default=1e-8,
                   help="relative Tikhonov weight, times trace(phi R phi^T)/M; 0 disables")
    p.add_argument("--basis", help="CSV table of spectra (one per row) for the eigenbasis")
    p.add_argument("--inner-tol", type=float, default=1e-8)
    p.add_argument("--inner-steps", type=int, default=200)
    p.add_argument("--early-stop", action="store_true")
    p.add_argument("--timing", action="store_true",
                   help="record wall time in trace.csv (makes the file non-reproducible)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("wiener", help="build the Wiener matrix of an MSFA for a training cube")
    p.add_argument("--train", required=True)
    p.add_argument("--msfa", required=True)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_wiener)

    p = sub.add_parser("mosaic", help="simulate the sensor image of a cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--msfa", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("demosaic", help="reconstruct a cube from a mosaicked image")
    p.add_argument("--mosaic", required=True)
    p.add_argument("--wiener", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("evaluate", help="PSNR, sRGB renderings and curve exports")
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate")
    p.add_argument("--msfa")
    p.add_argument("--wiener")
    p.add_argument("--patch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rerun", help="repeat a run recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_rerun)
    return parser


def _thread_limit():
    raw = os.environ.get("MSFA_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MSFA_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("MSFA_THREADS must be >= 0")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(), warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args, argv)
    except np.linalg.LinAlgError as exc:
        print(f"msfa {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError, IndexError) as exc:
        print(f"msfa {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
