"""Command-line interface: ``psdtrack <command> ...``.

Every command accepts ``--config rig.json`` (simulated rig, optionally with a
``seed``) and ``--noise noise.json``.  Seeds resolve as: ``--seed`` flag, then
the ``PSDTRACK_SEED`` environment variable, then the config's ``seed``, then 0.
Any library error ends the process with exit status 1 and a one-line message
on stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import warnings

import numpy as np

from .errors import ConfigurationError, GeometryWarning, PsdTrackError

SEED_ENV = "PSDTRACK_SEED"


# -- helpers ------------------------------------------------------------------------------


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return doc


@contextlib.contextmanager
def _open_out(path: str):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fh:
            yield fh


def _write_json(path: str, doc: dict):
    with _open_out(path) as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _config(args):
    from .sim.model import SimRig, default_sim_rig

    doc = _load_json(args.config) if args.config else {}
    rig = SimRig.from_dict(doc) if doc else default_sim_rig()
    return rig, doc


def _noise(args):
    from .sim.noise import NoiseModel

    if not args.noise:
        return NoiseModel()
    try:
        return NoiseModel.from_dict(_load_json(args.noise))
    except TypeError as exc:
        raise ConfigurationError(f"{args.noise}: {exc}") from exc


def resolve_seed(flag, config_doc: dict) -> int:
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(config_doc.get("seed", 0))


def _stereo_from(path: str):
    from .psd_optics import StereoRig

    doc = _load_json(path)
    # accept a bare stereo rig or a full simulated-rig document
    return StereoRig.from_dict(doc["stereo"] if "stereo" in doc else doc)


def _calib_from(path: str):
    from .calibration import CalibrationResult

    doc = _load_json(path)
    if doc.get("schema_version") != 1:
        raise ConfigurationError(f"{path}: unsupported calibration schema_version {doc.get('schema_version')!r}")
    return CalibrationResult.from_dict(doc)


def _frame_range(text: str):
    if not text:
        return None
    try:
        a, b = (int(v) for v in text.split(":"))
    except ValueError:
        raise ConfigurationError(f"--dark-frames expects START:STOP, got {text!r}") from None
    return np.arange(a, b)


# -- commands ------------------------------------------------------------------------------


def cmd_sim(args) -> int:
    from .power import PowerLut
    from .sim.simulator import simulate
    from .sim.trajectory import TrajectorySpec

    rig, doc = _config(args)
    noise = _noise(args)
    seed = resolve_seed(args.seed, doc)
    if args.traj == "sway":
        spec = TrajectorySpec.sway_preset(args.speed, cycles=args.cycles, depth=args.depth)
    else:
        spec = TrajectorySpec(kind="static_grid", workspace=args.preset, dwell_frames=args.dwell)
    lut = PowerLut.from_dict(_load_json(args.lut)) if args.lut else None
    out = simulate(spec, rig, noise, seed, lut=lut, dark_frames=_frame_range(args.dark_frames))
    with _open_out(args.output) as fh:
        for line in out.raw_lines():
            fh.write(line + "\n")
    if args.truth:
        with _open_out(args.truth) as fh:
            for line in out.truth_lines():
                fh.write(line + "\n")
    if args.trace:
        with _open_out(args.trace) as fh:
            for rec in out.power_trace:
                fh.write(json.dumps(rec) + "\n")
    print(f"simulated {out.n_frames} frames ({len(out.edges)} edges, {len(out.imu)} IMU readings), seed {seed}", file=sys.stderr)
    return 0


def _emit_report(report, args):
    sys.stdout.write(report.to_text())
    if args.json:
        with _open_out(args.json) as fh:
            fh.write(report.to_json() + "\n")


def cmd_eval(args) -> int:
    from .sim.experiments import run_dynamic_eval, run_static_eval

    rig, doc = _config(args)
    noise = _noise(args)
    seed = resolve_seed(args.seed, doc)
    calib = _calib_from(args.calib) if args.calib else None
    stereo = _stereo_from(args.rig) if args.rig else None
    if args.kind == "static":
        presets = args.preset or ["large", "large_narrow", "sweet_spot"]
        report = run_static_eval(presets, rig, calib, noise, seed, stereo=stereo)
    else:
        speeds = args.speed or ["slow", "moderate", "fast"]
        report = run_dynamic_eval(speeds, rig, calib, noise, seed, stereo=stereo, cycles=args.cycles)
    _emit_report(report, args)
    return 0


def cmd_track(args) -> int:
    from .fusion import RigConfig, Tracker, write_poses_jsonl
    from .multiplex import FrameDecoder, read_raw_jsonl, write_frames_jsonl

    rig, _ = _config(args)
    stereo = _stereo_from(args.rig)
    calib = _calib_from(args.calib)
    with _open_in(args.raw) as fh:
        edges, other = read_raw_jsonl(fh)
    decoder = FrameDecoder(rig.pattern)
    tracker = Tracker(RigConfig.from_calibration(calib, stereo))
    tracker.add_imu_records(other)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GeometryWarning)
        frames = decoder.push(edges) + decoder.flush()
    poses = tracker.run(frames)
    with _open_out(args.output) as fh:
        write_poses_jsonl(fh, poses)
    if args.frames:
        with _open_out(args.frames) as fh:
            write_frames_jsonl(fh, frames)
    stale = sum(p.stale for p in poses)
    print(
        f"{decoder.frames_decoded} frames decoded, {len(poses)} poses ({stale} stale), "
        f"{decoder.frames_sync_lost} sync lost, {decoder.frames_drift_dropped} drift dropped",
        file=sys.stderr,
    )
    return 0


def cmd_calibrate(args) -> int:
    from .calibration import (
        calibrate_object_imu,
        calibrate_stereo,
        pivot_calibrate,
        read_grid_observations,
        read_orientation_pairs,
        read_pivot_samples,
    )
    from .geometry import Rotation

    if args.target == "stereo":
        with _open_in(args.obs) as fh:
            obs = read_grid_observations(fh)
        nets = {}
        if args.nets_from:
            base = _stereo_from(args.nets_from)
            nets = {"left_net": base.left.bernstein_coeffs, "right_net": base.right.bernstein_coeffs}
        cal = calibrate_stereo(obs, **nets)
        doc = cal.rig.to_dict()
        doc["reprojection_rms"] = cal.reprojection_rms
        _write_json(args.output, doc)
        print(f"stereo: {len(obs)} grid poses, reprojection RMS {cal.reprojection_rms:.6f} mm", file=sys.stderr)
    elif args.target == "imu-object":
        with _open_in(args.pairs) as fh:
            pairs = read_orientation_pairs(fh)
        cal = calibrate_object_imu(pairs)
        _write_json(args.output, {"schema_version": 1, "imu_object": cal.rotation.tolist(), "residual": cal.residual})
        print(f"imu-object: {len(pairs)} pairs, residual {cal.residual:.3e}", file=sys.stderr)
    else:
        with _open_in(args.samples) as fh:
            sets = read_pivot_samples(fh)
        imu_object = None
        if args.imu_object:
            imu_object = Rotation(_load_json(args.imu_object)["imu_object"])
        res = pivot_calibrate(
            sets, threshold=args.threshold, max_iterations=args.max_iterations, imu_object=imu_object
        )
        _write_json(args.output, res.to_dict())
        print(
            f"pivot: {len(sets)} LEDs, {res.iterations} iterations, converged={res.converged}, "
            f"pivot {np.round(res.pivot, 3).tolist()} mm",
            file=sys.stderr,
        )
    return 0


def cmd_lut(args) -> int:
    from .power import build_lut, read_sweep_jsonl

    if args.action == "build":
        with _open_in(args.sweep) as fh:
            sweep = read_sweep_jsonl(fh)
        lut = build_lut(sweep)
        _write_json(args.output, lut.to_dict())
        print(f"LUT {lut.targets.shape[0]} x {lut.targets.shape[1]} from {len(sweep)} samples", file=sys.stderr)
    else:
        from .sim.simulator import model_sweep

        rig, _ = _config(args)
        with _open_out(args.output) as fh:
            for s in model_sweep(rig, _noise(args)):
                fh.write(json.dumps({"d": s.disparity, "angle": s.angle, "target": s.target}) + "\n")
    return 0


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="RIG_JSON", help="simulated rig configuration (JSON)")
    common.add_argument("--noise", metavar="NOISE_JSON", help="noise model (JSON)")
    common.add_argument("--seed", type=int, default=None, help=f"random seed (overrides ${SEED_ENV} and the config)")

    ap = argparse.ArgumentParser(prog="psdtrack", description=__doc__.splitlines()[0], parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sim", parents=[common], help="simulate a session and write the raw stream")
    p.add_argument("--traj", choices=["sway", "static_grid"], default="sway")
    p.add_argument("--speed", choices=["slow", "moderate", "fast"], default="slow")
    p.add_argument("--preset", choices=["large", "large_narrow", "sweet_spot"], default="sweet_spot")
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--depth", type=float, default=1000.0, help="sway depth (mm)")
    p.add_argument("--dwell", type=int, default=15, help="frames per static grid node")
    p.add_argument("--lut", help="power look-up table (default: built from the light model)")
    p.add_argument("--dark-frames", help="START:STOP frame range with every LED forced off")
    p.add_argument("-o", "--output", default="-", help="raw JSONL (ADC and IMU records)")
    p.add_argument("--truth", help="write ground truth at every edge (JSONL)")
    p.add_argument("--trace", help="write the power controller trace (JSONL)")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("eval", parents=[common], help="static or dynamic accuracy experiment")
    p.add_argument("kind", choices=["static", "dynamic"])
    p.add_argument("--preset", action="append", choices=["large", "large_narrow", "sweet_spot"])
    p.add_argument("--speed", action="append", choices=["slow", "moderate", "fast"])
    p.add_argument("--cycles", type=int, default=3)
    p.add_argument("--calib", help="calibration JSON given to the tracker (default: true values)")
    p.add_argument("--rig", help="stereo rig JSON given to the tracker (default: true values)")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("track", parents=[common], help="decode and fuse a raw stream into poses")
    p.add_argument("--raw", required=True, help="raw JSONL stream ('-' for stdin)")
    p.add_argument("--rig", required=True, help="stereo rig JSON")
    p.add_argument("--calib", required=True, help="calibration JSON")
    p.add_argument("-o", "--output", default="-", help="pose JSONL")
    p.add_argument("--frames", help="also write decoded frames (JSONL)")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("calibrate", parents=[common], help="offline calibration")
    csub = p.add_subparsers(dest="target", required=True)
    c = csub.add_parser("stereo", parents=[common], help="PSD intrinsics and extrinsics from grid observations")
    c.add_argument("--obs", required=True, help="grid observations JSONL")
    c.add_argument("--nets-from", help="rig JSON whose distortion nets are applied and kept")
    c.add_argument("-o", "--output", default="-")
    c = csub.add_parser("imu-object", parents=[common], help="object IMU alignment from orientation pairs")
    c.add_argument("--pairs", required=True, help="JSONL of {gRo_ref, gR_IMUo}")
    c.add_argument("-o", "--output", default="-")
    c = csub.add_parser("pivot", parents=[common], help="iterative pivot calibration")
    c.add_argument("--samples", required=True, help="JSONL of {led, P, q_bRo}")
    c.add_argument("--imu-object", help="JSON with an imu_object quaternion to carry into the result")
    c.add_argument("--threshold", type=float, default=1e-6)
    c.add_argument("--max-iterations", type=int, default=100)
    c.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("lut", parents=[common], help="power look-up table")
    lsub = p.add_subparsers(dest="action", required=True)
    c = lsub.add_parser("build", parents=[common], help="bin a sweep into a LUT")
    c.add_argument("--sweep", required=True, help="JSONL of {d, angle, target}")
    c.add_argument("-o", "--output", default="-")
    c = lsub.add_parser("sweep", parents=[common], help="write the simulator's light-model sweep")
    c.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_lut)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PsdTrackError, ValueError, KeyError, TypeError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"psdtrack: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
