"""Command-line front end: ``misar <subcommand> [options]``.

Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 configuration,
4 data format, 5 numerical failure.  ``MISAR_WORKERS`` sets the default
for ``--workers``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, calib, fileio, imaging, pipeline, tracking
from .config import load_config
from .errors import ConfigError, MisarError
from .simulator import Trajectory, add_noise, simulate_collection

log = logging.getLogger("misar")


def _load_spec(args) -> pipeline.ExperimentSpec:
    if args.config:
        cfg = load_config(args.config)
        base = pipeline.humanoid_spec() if cfg.get("experiment.scene") == "humanoid" else None
        spec = pipeline.ExperimentSpec.from_config(cfg, base)
    else:
        spec = pipeline.point_target_spec()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.upsample is not None:
        changes["upsample"] = args.upsample
    if args.window is not None:
        changes["window"] = args.window.upper()
    if args.deterministic is not None:
        changes["deterministic"] = args.deterministic
    workers = _workers(args)
    if workers is not None and len(workers) == 1:
        changes["workers"] = workers[0]
    try:
        return replace(spec, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _workers(args) -> list[int] | None:
    raw = args.workers if args.workers is not None else os.environ.get("MISAR_WORKERS")
    if raw is None:
        return None
    try:
        vals = [int(v) for v in str(raw).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad worker count {raw!r}") from exc
    if not vals or min(vals) < 1:
        raise ConfigError(f"bad worker count {raw!r}")
    return vals


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _trajectory(args, spec) -> Trajectory:
    if getattr(args, "track", None):
        t, p, v, _ = tracking.read_track_csv(Path(args.track).read_text())
        if v is None:
            v = np.gradient(p, t, axis=0) if t.size > 1 else np.zeros_like(p)
        return Trajectory(t, p, v)
    return spec.truth_trajectory()


def cmd_simulate(args) -> None:
    spec = _load_spec(args)
    out = _out(args)
    scene, _ = pipeline.build_scene(spec)
    cube = simulate_collection(scene, spec.truth_trajectory(), spec.geometry(), spec.truth_errors(),
                               spec.chirp, spec.n_bursts, spec.burst_interval)
    cube = add_noise(cube, spec.snr_db, seed=spec.seed)
    fileio.write_cube(out / "cube.bin", cube)
    (out / "spec.txt").write_text(spec.to_text())


def cmd_scan(args) -> None:
    spec = _load_spec(args)
    out = _out(args)
    pulses = calib.simulate_link_pulses(spec.geometry(), spec.truth_errors(), spec.scan, spec.chirp,
                                        snr_db=spec.scan_snr_db, seed=spec.seed)
    obs = calib.extract_observables(*pulses, params=spec.chirp, upsample=spec.upsample)
    (out / "scan.csv").write_text(obs.to_csv())


def cmd_calibrate(args) -> None:
    spec = _load_spec(args)
    out = _out(args)
    obs = calib.ObservationSet.from_csv(Path(args.scan).read_text())
    sol = calib.estimate(obs, spec.geometry(), spec.chirp, delay_in_phase=True)
    (out / "calib.txt").write_text(calib.solution_to_text(sol))
    if not sol.ok:
        log.warning("calibration did not converge for every antenna")


def cmd_track(args) -> None:
    spec = _load_spec(args)
    out = _out(args)
    if args.measurements:
        t, z, _, valid = tracking.read_track_csv(Path(args.measurements).read_text())
    else:
        truth = spec.truth_trajectory()
        t, z, _ = tracking.simulate_measurements(truth, spec.track_rate, spec.track_sigma, truth.t[0],
                                                 truth.t[-1], spec.track_outliers, seed=spec.seed)
        valid = None
        (out / "measurements.csv").write_text(tracking.measurements_to_csv(t, z))
    res = tracking.run_tracker(t, z, valid, spec.tracking)
    (out / "track.csv").write_text(tracking.trajectory_to_csv(res.trajectory))
    log.info("accepted %d of %d fixes", int(res.accepted.sum()), res.accepted.size)


def cmd_image(args) -> None:
    spec = _load_spec(args)
    out = _out(args)
    cube = fileio.read_cube(args.cube)
    geom = spec.geometry()
    sol = None
    if args.calib:
        sol = calib.solution_from_text(Path(args.calib).read_text())
        cube = calib.compensate(cube, sol)
    image = imaging.backproject_parallel(cube, geom, _trajectory(args, spec), spec.grid(), spec.options(),
                                         spec.workers, sol)
    fileio.write_image(out / "image.bin", image)
    imaging.export_slices(image, spec.slice_axis, out_dir=out / "slices")


def cmd_metrics(args) -> None:
    image = fileio.read_image(args.image)
    if args.before:
        items = analysis.compare_before_after(fileio.read_image(args.before), image).items()
    else:
        items = analysis.psf_metrics(image).items()
    text = analysis.report_text(items)
    sys.stdout.write(text)
    if args.out:
        out = _out(args)
        (out / "report.txt").write_text(text)
        (out / "report.csv").write_text(analysis.report_csv(items))


def cmd_pipeline(args) -> None:
    spec = _load_spec(args)
    res = pipeline.run_experiment(spec, args.out)
    sys.stdout.write((res.out_dir / "report.txt").read_text())


def cmd_bench(args) -> None:
    spec = _load_spec(args)
    workers = _workers(args) or [1, 2, 4, 8]
    if args.bursts:
        spec = replace(spec, n_bursts=args.bursts)
    scene, _ = pipeline.build_scene(spec)
    truth = spec.truth_trajectory()
    cube = simulate_collection(scene, truth, spec.geometry(), None, spec.chirp, spec.n_bursts,
                               spec.burst_interval)
    rows = imaging.benchmark(cube, spec.geometry(), truth, spec.grid(), workers, spec.options())
    text = imaging.benchmark_csv(rows)
    sys.stdout.write(text)
    if args.out:
        (_out(args) / "bench.csv").write_text(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", help="worker count (bench: comma-separated list)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--upsample", type=int, choices=(1, 2, 4, 8))
    common.add_argument("--window", choices=("NONE", "HANN", "none", "hann"))
    common.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="misar", description="Sparse-MIMO FMCW 3D ISAR toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, need_out=True):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=func, need_out=need_out)
        return sp

    add("simulate", cmd_simulate, "simulate a raw data cube")
    add("scan", cmd_scan, "simulate the calibration scan and extract link observables")
    add("calibrate", cmd_calibrate, "estimate channel errors from scan observables").add_argument(
        "--scan", required=True, help="scan.csv from the scan subcommand")
    sp = add("track", cmd_track, "Kalman-track the target reference point")
    sp.add_argument("--measurements", help="t,x,y,z[,valid] CSV; simulated if omitted")
    sp = add("image", cmd_image, "back-project a cube onto the voxel grid")
    sp.add_argument("--cube", required=True)
    sp.add_argument("--calib", help="calibration solution to compensate with")
    sp.add_argument("--track", help="trajectory CSV; the configured truth motion if omitted")
    sp = add("metrics", cmd_metrics, "PSF metrics of an image", need_out=False)
    sp.add_argument("--image", required=True)
    sp.add_argument("--before", help="uncalibrated image for a before/after comparison")
    add("pipeline", cmd_pipeline, "run a full experiment")
    sp = add("bench", cmd_bench, "imaging throughput per worker count", need_out=False)
    sp.add_argument("--bursts", type=int, help="override the number of bursts")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    if args.need_out and not args.out:
        parser.error(f"{args.command}: --out is required")
    try:
        args.func(args)
    except MisarError as exc:
        print(f"misar {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"misar {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code if isinstance(exc, ValueError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
