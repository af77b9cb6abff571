import json
from pathlib import Path

import numpy as np
import pytest

from psdtrack.errors import EmptyVisibilityError, NoDataError
from psdtrack.fusion import base_orientation, object_orientation, relative_orientation
from psdtrack.geometry import Rotation, angular_distance
from psdtrack.sim import (
    UPRIGHT,
    NoiseModel,
    SimRig,
    TrajectorySpec,
    build_trajectory,
    default_sim_rig,
    model_sweep,
    simulate,
)
from psdtrack.sim.experiments import error_stats, run_dynamic_eval, run_pipeline, run_static_eval

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def static_points(rig, points, dwell=5):
    return TrajectorySpec(kind="static_grid", points=tuple(map(tuple, points)), dwell_frames=dwell)


# -- forward model ---------------------------------------------------------------------


def test_zero_noise_static_point_identity(sim_rig, zero_noise):
    p = np.array([sim_rig.midline_x + 30.0, sim_rig.tou.ring_height - 20.0, 750.0])
    out = simulate(static_points(sim_rig, [p]), sim_rig, zero_noise, seed=0)
    poses, dec, tracker = run_pipeline(out, sim_rig)
    assert len(poses) == out.n_frames and dec.frames_sync_lost == 0
    for pose in poses.values():
        assert np.max(np.abs(pose.Q - p)) < 1e-9
        assert np.radians(angular_distance(pose.b_r_o, UPRIGHT)) < 1e-9


def test_chain_against_simulated_imu(sim_rig, zero_noise):
    out = simulate(TrajectorySpec.sway_preset("moderate", cycles=1), sim_rig, zero_noise, seed=2)
    obj = [r for r in out.imu if r.source == "object"]
    base = {r.t_us: r for r in out.imu if r.source == "base"}
    for r in obj[::97]:
        got = relative_orientation(base_orientation(base[r.t_us].orientation, sim_rig.imu_base), object_orientation(r.orientation, sim_rig.imu_object))
        _, q_true = out.truth_at(np.array([r.t_us]))
        assert np.radians(angular_distance(got, Rotation(q_true[0]))) < 1e-9


def test_same_seed_same_stream(sim_rig):
    spec = TrajectorySpec.sway_preset("fast", cycles=1)
    a = list(simulate(spec, sim_rig, NoiseModel(), seed=11).raw_lines())
    b = list(simulate(spec, sim_rig, NoiseModel(), seed=11).raw_lines())
    c = list(simulate(spec, sim_rig, NoiseModel(), seed=12).raw_lines())
    assert a == b
    assert a != c


def test_dark_segment_gives_no_fixes(sim_rig):
    p = np.array([sim_rig.midline_x, sim_rig.tou.ring_height, 800.0])
    out = simulate(static_points(sim_rig, [p], dwell=30), sim_rig, NoiseModel(), seed=1, dark_frames=np.arange(10, 20))
    poses, dec, _ = run_pipeline(out, sim_rig)
    assert dec.frames_sync_lost == 10
    assert all(f not in poses or poses[f].stale for f in range(10, 20))
    assert not poses[25].stale


def test_invisible_trajectory(sim_rig):
    with pytest.raises(EmptyVisibilityError):
        simulate(static_points(sim_rig, [(5000.0, 0.0, 800.0)]), sim_rig, NoiseModel(), seed=0)


def test_truth_lookup_is_exact(sim_rig, zero_noise):
    out = simulate(static_points(sim_rig, [(sim_rig.midline_x, 100.0, 800.0)], dwell=2), sim_rig, zero_noise, seed=0)
    q, _ = out.truth_at(out.edge_t[1, 3:4])
    assert q.shape == (1, 3)
    with pytest.raises(KeyError):
        out.truth_at(np.array([out.edge_t[1, 3] + 1]))


def test_quantised_stream_is_integer(sim_rig):
    out = simulate(TrajectorySpec.sway_preset("slow", cycles=1), sim_rig, NoiseModel(), seed=0)
    assert out.edges.first.dtype == np.int64
    rec = json.loads(next(iter(out.raw_lines())))
    assert isinstance(rec["first"], int)


def test_model_sweep_disparity_falls_with_depth(sim_rig):
    sweep = model_sweep(sim_rig, NoiseModel(), depths=np.arange(300, 1401, 100), angles=[0.0])
    d = [s.disparity for s in sweep]
    assert np.all(np.diff(d) < 0)


# -- trajectories ------------------------------------------------------------------------------


def test_grid_samples_stay_inside_dwell():
    spec = TrajectorySpec(workspace="sweet_spot", dwell_frames=15, samples_per_node=5)
    traj = build_trajectory(spec, UPRIGHT, 75.0, 100.0, seed=0)
    frames, nodes = traj.sample_frames, traj.sample_nodes
    assert len(frames) == 5 * len(traj.nodes)
    assert np.all(frames // 15 == nodes)
    assert np.all(frames % 15 <= 12)  # two-frame guard before the next node


def test_grid_node_counts():
    for preset in ("sweet_spot", "large_narrow", "large"):
        traj = build_trajectory(TrajectorySpec(workspace=preset), UPRIGHT, 75.0, 100.0, seed=0)
        assert len(traj.nodes) > 8


def test_sway_speeds_shorten_the_run():
    n = [build_trajectory(TrajectorySpec.sway_preset(s), UPRIGHT, 75.0, 100.0, 0).n_frames for s in ("slow", "moderate", "fast")]
    assert n[0] > n[1] > n[2]


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="spiral"),
        dict(workspace="garage"),
        dict(dwell_frames=0),
        dict(samples_per_node=20),
        dict(sway_axis=(0, 0, 0)),
        dict(kind="sway", velocity=0.0),
    ],
)
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        TrajectorySpec(**kw)


# -- configuration ------------------------------------------------------------------------------


def test_noise_round_trip_and_unknown_fields():
    n = NoiseModel(read_noise=3.0)
    assert NoiseModel.from_dict(json.loads(json.dumps(n.to_dict()))) == n
    with pytest.raises(ValueError):
        NoiseModel.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        NoiseModel(read_noise=-1)


def test_sim_rig_round_trip():
    rig = default_sim_rig()
    assert SimRig.from_dict(json.loads(json.dumps(rig.to_dict()))).to_dict() == rig.to_dict()
    with pytest.raises(ValueError):
        SimRig.from_dict({**rig.to_dict(), "lense": []})
    with pytest.raises(ValueError):
        SimRig.from_dict({**rig.to_dict(), "schema_version": 0})


def test_shipped_configs_match_defaults():
    rig = json.loads((CONFIGS / "rig.json").read_text())
    rig.pop("seed", None)
    assert rig == json.loads(json.dumps(default_sim_rig().to_dict()))
    noise = json.loads((CONFIGS / "noise.json").read_text())
    assert NoiseModel.from_dict(noise) == NoiseModel()
    assert NoiseModel.from_dict(json.loads((CONFIGS / "noise_zero.json").read_text())) == NoiseModel.zero()


# -- statistics and reports --------------------------------------------------------------------


def test_error_stats_examples():
    s = error_stats([3.0, 4.0])
    assert s.rms == pytest.approx(np.sqrt(12.5)) and s.mean == 3.5 and s.n == 2
    z = error_stats(np.zeros(10))
    assert (z.rms, z.mean, z.ci95) == (0.0, 0.0, 0.0)


def test_error_stats_ci95_on_uniform(rng):
    assert error_stats(rng.uniform(0, 1, 100_000)).ci95 == pytest.approx(0.95, abs=0.01)


def test_error_stats_empty():
    with pytest.raises(NoDataError):
        error_stats([])


def test_zero_noise_dynamic_eval(sim_rig, zero_noise):
    rep = run_dynamic_eval(["fast"], sim_rig, noise=zero_noise, cycles=1)
    row = rep.rows["fast"]
    assert row["position"].rms < 1e-6 and row["orientation"].rms < 1e-6
    assert row["stale"] == 0


def test_report_formats(sim_rig, zero_noise):
    rep = run_static_eval(["sweet_spot"], sim_rig, noise=zero_noise, seed=3, step=200)
    d = json.loads(rep.to_json())
    assert d["schema_version"] == 1 and d["kind"] == "static" and d["seed"] == 3
    assert set(d["rows"]["sweet_spot"]["position"]) == {"rms", "mean", "ci95", "n"}
    text = rep.to_text()
    assert "sweet_spot" in text and "RMS" in text and rep.fingerprint in text


def test_unknown_presets_rejected(sim_rig):
    with pytest.raises(ValueError):
        run_static_eval(["garage"], sim_rig)
    with pytest.raises(ValueError):
        run_dynamic_eval(["warp"], sim_rig)
