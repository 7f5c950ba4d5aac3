"""Batch command-line interface.

Subcommands:

* ``synth``        -- write a synthetic world (target / inversion line / filaments)
* ``reconstruct``  -- train an ensemble on one filament map and score it
* ``batch``        -- reconstruct a list of maps, with optional warm-start chaining
* ``serve``        -- run the interactive HTTP service

Exit codes: 0 success, 2 usage, 3 I/O or format failure, 4 numeric abort,
1 partial batch failure.  ``--jobs`` defaults to the ``PILRECON_JOBS``
environment variable.  Every run writes a ``manifest.json`` with the
configuration hash, seeds, input digests and wall-clock per stage, so a run
is reproducible from its manifest alone.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import net
from .geometry import GridSpec, ReferencePointSet, pole_polarities, reference_grid
from .loss import LossWeights
from .metrics import error_fractions, format_report_row, pearson, pixel_counts
from .rasters import (
    RasterFormatError,
    load_raster,
    load_reference_points,
    save_raster,
    save_reference_points,
)
from .synth import SynthSpec, generate
from .trainer import TrainConfig, TrainingDiverged, export_history

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def _canonical_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_json(path, payload) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gap", type=int, default=None, help="seam gap in pixels (default width/64)")
    p.add_argument("--latitude-mode", choices=["equal-angle", "sine-latitude"], default="equal-angle")
    p.add_argument("--embedding", choices=["cylinder", "sphere", "plane"], default="cylinder")
    p.add_argument("--z-half-height", type=float, default=1.0)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--members", type=int, default=4, help="ensemble size")
    p.add_argument("--iterations", type=int, default=30000)
    p.add_argument("--learning-rate", type=float, default=5e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=0, help="0 = full batch")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--record-every", type=int, default=100)
    p.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    p.add_argument("--strategy", choices=["mean", "majority"], default="mean")
    p.add_argument("--poles", default="auto",
                   help="'auto' (majority of the target's pole bands) or 'pN,pS', e.g. '1,-1'")
    p.add_argument("--lam-neutrality", type=float, default=1.0)
    p.add_argument("--lam-filament-zero", type=float, default=1.0)
    p.add_argument("--lam-bipolarity", type=float, default=1.0)
    p.add_argument("--lam-pole", type=float, default=1.0)
    p.add_argument("--lam-gradnorm", type=float, default=0.0)
    p.add_argument("--lam-reference", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=int(os.environ.get("PILRECON_JOBS", "1")))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pilrecon", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic world")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--harmonics", type=int, default=3)
    p.add_argument("--max-wavenumber", type=int, default=2)
    p.add_argument("--rho", type=float, default=0.6, help="fraction of the line covered by filaments")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="train an ensemble on one map")
    p.add_argument("--filaments", required=True)
    p.add_argument("--target", default=None, help="target polarity map (enables scoring)")
    p.add_argument("--grid-step", type=int, default=None,
                   help="reference grid step; 0 = no reference points (needs --target unless 0)")
    p.add_argument("--refs", default=None, help="reference points file (row col polarity)")
    p.add_argument("--pil", default=None, help="true inversion-line mask (enables pixel counts)")
    p.add_argument("--warm-start-dir", default=None,
                   help="previous ensemble directory; member k starts from its member k snapshot")
    p.add_argument("--outdir", required=True)
    _add_grid_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("batch", help="reconstruct a list of maps")
    p.add_argument("--maps", required=True,
                   help="text file: 'map_id filaments [target|-] [pil|-]' per line")
    p.add_argument("--grid-step", type=int, default=32)
    p.add_argument("--chain-warm-start", action="store_true",
                   help="initialize each map's members from the previous map's")
    p.add_argument("--outdir", required=True)
    _add_grid_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("serve", help="run the interactive HTTP service")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--snapshot-dir", default=None)
    p.add_argument("--max-pixels", type=int, default=512 * 1024)
    p.add_argument("--cors-origin", default="*")
    p.set_defaults(func=cmd_serve)
    return parser


def cmd_synth(args) -> int:
    if not 0.0 <= args.rho <= 1.0:
        print(f"error: --rho must lie in [0, 1], got {args.rho}", file=sys.stderr)
        return EXIT_USAGE
    spec = SynthSpec(args.height, args.width, args.harmonics, args.max_wavenumber,
                     args.rho, args.seed)
    t0 = time.perf_counter()
    target, pil, filaments = generate(spec)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_raster(target, outdir / "target.pgm")
    save_raster(pil, outdir / "pil.pgm")
    save_raster(filaments, outdir / "filaments.pgm")
    config = dict(height=args.height, width=args.width, harmonics=args.harmonics,
                  max_wavenumber=args.max_wavenumber, rho=args.rho, seed=args.seed)
    _write_json(outdir / "manifest.json", {
        "command": "synth",
        "config": config,
        "config_hash": _canonical_hash(config),
        "seeds": [args.seed],
        "inputs": {},
        "outputs": sorted(p.name for p in outdir.glob("*.pgm")),
        "timings": {"generate": time.perf_counter() - t0},
    })
    return EXIT_OK


def _grid_spec_for(args, height, width) -> GridSpec:
    return GridSpec(height, width, gap_px=args.gap, latitude_mode=args.latitude_mode,
                    embedding=args.embedding, z_half_height=args.z_half_height)


def _weights_for(args) -> LossWeights:
    return LossWeights(
        neutrality=args.lam_neutrality,
        filament_zero=args.lam_filament_zero,
        bipolarity=args.lam_bipolarity,
        pole_prior=args.lam_pole,
        gradient_norm=args.lam_gradnorm,
        reference=args.lam_reference,
    )


def _poles_for(args, spec, target) -> tuple[int, int]:
    if args.poles == "auto":
        if target is None:
            raise ValueError("--poles auto needs --target; pass explicit poles like '1,-1'")
        return pole_polarities(spec, target)
    parts = args.poles.split(",")
    if len(parts) != 2:
        raise ValueError(f"--poles must be 'auto' or 'pN,pS', got {args.poles!r}")
    p_n, p_s = int(parts[0]), int(parts[1])
    if p_n not in (-1, 1) or p_s not in (-1, 1):
        raise ValueError("pole polarities must be +1 or -1")
    return p_n, p_s


def _refs_for(args, spec, target) -> ReferencePointSet:
    refs_path = getattr(args, "refs", None)
    if refs_path is not None and args.grid_step is not None:
        raise ValueError("--refs and --grid-step are mutually exclusive")
    if refs_path is not None:
        refs = load_reference_points(refs_path)
        refs.check_bounds(spec)
        return refs
    step = args.grid_step if args.grid_step is not None else 0
    if step == 0:
        return ReferencePointSet((), provenance="grid")
    if target is None:
        raise ValueError("--grid-step needs --target to read polarities from")
    return reference_grid(spec, step, target)


def _load_warm_starts(dirpath, members: int):
    warm = []
    for k in range(members):
        path = Path(dirpath) / f"member_{k:03d}.params"
        warm.append(net.load_params(path) if path.exists() else None)
    return warm


def _reconstruct_one(args, map_id, filaments_path, target_path, pil_path, outdir,
                     warm_starts=None):
    """Shared by reconstruct and batch; returns (report_row, models, timings)."""
    timings = {}
    t0 = time.perf_counter()
    filaments = load_raster(filaments_path, "filament")
    target = load_raster(target_path, "polarity") if target_path else None
    if target is not None and target.data.shape != filaments.data.shape:
        raise ValueError(
            f"{map_id}: target {target.data.shape} does not match filaments {filaments.data.shape}"
        )
    spec = _grid_spec_for(args, filaments.height, filaments.width)
    refs = _refs_for(args, spec, target)
    poles = _poles_for(args, spec, target)
    weights = _weights_for(args)
    config = TrainConfig(
        iterations=args.iterations,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        record_every=args.record_every,
        dtype=args.dtype,
    )
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    models = ens.train_ensemble(
        filaments, spec, refs, poles, weights, config,
        members=args.members, base_seed=args.base_seed, jobs=args.jobs,
        warm_starts=warm_starts,
    )
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    maps = ens.member_maps(models, spec)
    result = ens.aggregate(maps, args.strategy)
    outdir.mkdir(parents=True, exist_ok=True)
    ens.save_ensemble(outdir, models, result, args.base_seed, config)
    for k, model in enumerate(models):
        export_history(model, outdir / f"member_{k:03d}.history.txt")
    if refs:
        save_reference_points(refs, outdir / "refs.txt")
    timings["aggregate"] = time.perf_counter() - t0

    row = None
    if target is not None:
        report = error_fractions(result.binarized, target, spec)
        if pil_path:
            pil = load_raster(pil_path, "filament")
            n_fil, n_pil, ratio = pixel_counts(filaments, pil)
        else:
            n_fil, n_pil, ratio = int(filaments.data.sum()), 0, float("nan")
        row = format_report_row(map_id, report, n_fil, n_pil, ratio)
        (outdir / "report.txt").write_text(
            "# map_id e_total e_band n_filament n_pil ratio\n" + row + "\n"
        )
    return row, models, timings


def cmd_reconstruct(args) -> int:
    outdir = Path(args.outdir)
    warm = _load_warm_starts(args.warm_start_dir, args.members) if args.warm_start_dir else None
    row, _, timings = _reconstruct_one(
        args, Path(args.filaments).stem, args.filaments, args.target, args.pil,
        outdir, warm_starts=warm,
    )
    config_payload = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = {str(args.filaments): _sha256_file(args.filaments)}
    if args.target:
        inputs[str(args.target)] = _sha256_file(args.target)
    if args.refs:
        inputs[str(args.refs)] = _sha256_file(args.refs)
    _write_json(outdir / "manifest.json", {
        "command": "reconstruct",
        "config": config_payload,
        "config_hash": _canonical_hash(config_payload),
        "seeds": [ens.member_seed(args.base_seed, k) for k in range(args.members)],
        "inputs": inputs,
        "outputs": sorted(p.name for p in outdir.iterdir() if p.name != "manifest.json"),
        "timings": timings,
    })
    if row:
        print(row)
    return EXIT_OK


def _parse_maps_file(path) -> list[tuple[str, str, str | None, str | None]]:
    rows = []
    base = Path(path).parent
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"{path}:{lineno}: expected 'map_id filaments [target] [pil]'")
        def resolve(token):
            if token is None or token == "-":
                return None
            p = Path(token)
            return str(p if p.is_absolute() else base / p)
        rows.append((
            parts[0],
            resolve(parts[1]),
            resolve(parts[2]) if len(parts) > 2 else None,
            resolve(parts[3]) if len(parts) > 3 else None,
        ))
    return rows


def cmd_batch(args) -> int:
    entries = _parse_maps_file(args.maps)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    ratios, errors = [], []
    chain_warm = None
    chain_record = {}
    timings = {}
    for map_id, fil_path, target_path, pil_path in entries:
        try:
            row, models, t = _reconstruct_one(
                args, map_id, fil_path, target_path, pil_path,
                outdir / map_id, warm_starts=chain_warm,
            )
            timings[map_id] = t
            if args.chain_warm_start:
                chain_record[map_id] = "previous map" if chain_warm else "random init"
                chain_warm = [m.params for m in models]
            if row:
                rows.append(row)
                fields = row.split()
                if fields[5] != "nan":
                    ratios.append(float(fields[5]))
                    errors.append(float(fields[1]))
        except Exception as exc:
            failures.append((map_id, f"{type(exc).__name__}: {exc}"))
    summary = ["# map_id e_total e_band n_filament n_pil ratio"] + rows
    if rows:
        e_totals = [float(r.split()[1]) for r in rows]
        e_bands = [float(r.split()[2]) for r in rows]
        summary.append(f"# mean_e_total {np.mean(e_totals):.6g} mean_e_band {np.mean(e_bands):.6g}")
    if len(ratios) >= 2:
        try:
            summary.append(f"# pearson_ratio_vs_e_total {pearson(ratios, errors):.6g}")
        except ValueError:
            summary.append("# pearson_ratio_vs_e_total undefined")
    for map_id, msg in failures:
        summary.append(f"# FAILED {map_id}: {msg}")
    (outdir / "report.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))

    config_payload = {k: v for k, v in vars(args).items() if k != "func"}
    inputs = {}
    for _, fil_path, target_path, pil_path in entries:
        for p in (fil_path, target_path, pil_path):
            if p and Path(p).exists():
                inputs[p] = _sha256_file(p)
    manifest = {
        "command": "batch",
        "config": config_payload,
        "config_hash": _canonical_hash(config_payload),
        "seeds": [ens.member_seed(args.base_seed, k) for k in range(args.members)],
        "inputs": inputs,
        "outputs": [str(p.relative_to(outdir)) for p in sorted(outdir.rglob("*")) if p.is_file()],
        "timings": timings,
        "failures": dict(failures),
    }
    if args.chain_warm_start:
        manifest["warm_start_donors"] = chain_record
    _write_json(outdir / "manifest.json", manifest)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        snapshot_dir=args.snapshot_dir,
        max_pixels=args.max_pixels,
        cors_origin=args.cors_origin,
    )
    uvicorn.run(app, host=args.bind, port=args.port, log_level="info")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ens.EnsembleError as exc:
        cause = exc.__cause__
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(cause, (TrainingDiverged, FloatingPointError)):
            return EXIT_NUMERIC
        return EXIT_IO
    except (OSError, RasterFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
