import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from psdtrack.errors import ConfigurationError, SparseSweepError
from psdtrack.geometry import Rotation
from psdtrack.power import (
    ControllerState,
    PowerLoop,
    PowerLut,
    SweepSample,
    build_lut,
    control_step,
    led_off_axis_angle,
    lut_lookup,
    read_sweep_jsonl,
)


def _table():
    return PowerLut(
        disparity=np.array([4.0, 2.0, 1.0]),
        angle=np.array([0.0, 30.0, 60.0]),
        targets=np.array([[100.0, 150.0, 300.0], [200.0, 260.0, 500.0], [400.0, 480.0, 900.0]]),
    )


@pytest.fixture
def lut():
    return _table()


def test_lookup_on_node(lut):
    assert lut_lookup(lut, 2.0, 30.0) == 260.0
    assert lut_lookup(lut, 4.0, 0.0) == 100.0


def test_lookup_midway_is_mean(lut):
    assert lut_lookup(lut, 3.0, 30.0) == pytest.approx(0.5 * (150.0 + 260.0))


def test_lookup_clamps(lut):
    assert lut_lookup(lut, 0.1, 0.0) == 400.0
    assert lut_lookup(lut, 99.0, 99.0) == 300.0


def test_lookup_rejects_non_finite(lut):
    with pytest.raises(ValueError):
        lut_lookup(lut, float("nan"), 0.0)


@given(st.floats(0, 5), st.floats(0, 60))
def test_lookup_within_table_range(d, a):
    lut = _table()
    v = lut_lookup(lut, d, a)
    assert lut.targets.min() - 1e-9 <= v <= lut.targets.max() + 1e-9


def test_lut_validation():
    with pytest.raises(ConfigurationError):
        PowerLut(np.array([]), np.array([0.0]), np.zeros((0, 1)))
    with pytest.raises(ConfigurationError):
        PowerLut(np.array([1.0, 2.0]), np.array([0.0]), np.ones((2, 1)))  # ascending disparity
    with pytest.raises(ConfigurationError):
        PowerLut(np.array([1.0]), np.array([0.0]), np.array([[-1.0]]))
    with pytest.raises(ConfigurationError):
        PowerLut(np.array([1.0]), np.array([0.0]), np.array([[1e6]]))


def test_lut_dict_round_trip(lut):
    back = PowerLut.from_dict(json.loads(json.dumps(lut.to_dict())))
    assert np.array_equal(back.targets, lut.targets)
    with pytest.raises(ConfigurationError):
        PowerLut.from_dict({**lut.to_dict(), "schema_version": 2})


# -- controller -----------------------------------------------------------------------


def test_on_target_keeps_power():
    s = control_step(ControllerState(power=0.4), 700.0, 1000.0, 1000.0)
    assert s.error == 0 and s.power == 0.4


def test_proportional_step():
    s = control_step(ControllerState(power=0.2), 400.0, 300.0, 1000.0, kp=1e-4)
    assert s.error == 600.0
    assert s.power == pytest.approx(0.26)


def test_saturates_high():
    s = control_step(ControllerState(power=1.0), 10.0, 10.0, 1000.0)
    assert s.power == 1.0 and s.saturated_high and not s.saturated_low


def test_saturates_low():
    s = control_step(ControllerState(power=0.0), 5000.0, 10.0, 1000.0)
    assert s.power == 0.0 and s.saturated_low


@given(st.floats(0, 1), st.floats(0, 3e4), st.floats(0, 3e4), st.floats(1, 3e4), st.floats(1e-7, 1e-2))
def test_power_stays_in_range(p, sl, sr, target, kp):
    s = control_step(ControllerState(power=p), sl, sr, target, kp)
    assert 0.0 <= s.power <= 1.0
    assert s.error == target - max(sl, sr)


def test_state_validation():
    with pytest.raises(ValueError):
        ControllerState(power=1.5)


def test_loop_latency(lut):
    loop = PowerLoop(lut, kp=1e-4, latency_frames=2, state=ControllerState(power=0.5))
    applied = [loop.step(0.0, 0.0, 2.0, 30.0) for _ in range(4)]
    # commands issued after frames 0, 1 take effect two frames later
    assert applied[0] == 0.5 and applied[1] == 0.5
    assert applied[2] == pytest.approx(0.5 + 260e-4)
    assert len(loop.trace) == 4


def test_loop_holds_when_blind(lut):
    loop = PowerLoop(lut, state=ControllerState(power=0.3))
    assert loop.step(0.0, 0.0, None, None) == 0.3
    assert loop.trace[-1]["error"] == 0.0


def test_loop_converges_on_linear_plant(lut):
    # sum = gain * power; fixed point is power = target / gain
    loop = PowerLoop(lut, kp=1e-4, state=ControllerState(power=0.1))
    gain = 1000.0
    for _ in range(200):
        p = loop.applied_power
        loop.step(gain * p, 0.5 * gain * p, 2.0, 30.0)
    assert gain * loop.applied_power == pytest.approx(260.0, rel=1e-6)


# -- LUT construction ----------------------------------------------------------------


def test_single_sample_lut():
    t = build_lut([SweepSample(2.0, 10.0, 555.0)])
    assert t.targets.shape == (1, 1)
    assert lut_lookup(t, 0.1, 80.0) == 555.0 and lut_lookup(t, 7.0, 0.0) == 555.0


def test_duplicates_keep_max():
    t = build_lut([(2.0, 0.0, 100.0), (2.0, 0.0, 300.0), (2.0, 0.0, 200.0)])
    assert t.targets[0, 0] == 300.0


def test_targets_nondecreasing_with_depth():
    # a dip at mid depth is lifted by the running max
    t = build_lut([(4.0, 0.0, 100.0), (2.0, 0.0, 80.0), (1.0, 0.0, 250.0)])
    assert t.targets[:, 0].tolist() == [100.0, 100.0, 250.0]


def test_sparse_sweep_lists_empty_cells():
    with pytest.raises(SparseSweepError) as err:
        build_lut([(4.0, 0.0, 100.0), (2.0, 30.0, 80.0)])
    assert "4.0" in str(err.value) or "2.0" in str(err.value)


def test_explicit_bins():
    sweep = [(d, a, 100.0 + 10 * d + a) for d in (1.1, 1.4, 2.6, 2.9) for a in (5.0, 25.0)]
    t = build_lut(sweep, disparity_edges=[1.0, 2.0, 3.0], angle_edges=[0.0, 20.0, 40.0])
    assert t.disparity.tolist() == [2.5, 1.5]
    assert t.targets.shape == (2, 2)


def test_empty_sweep():
    with pytest.raises(ConfigurationError):
        build_lut([])


def test_simulated_sweep_lut_monotone(sim_rig):
    from psdtrack.sim import NoiseModel, model_sweep

    sweep = model_sweep(sim_rig, NoiseModel(), depths=np.linspace(300, 1300, 11))
    lut = build_lut(sweep)
    assert lut.disparity.size == 11
    # disparity stored descending: targets must not increase as disparity increases
    assert np.all(np.diff(lut.targets[::-1], axis=0) <= 0)


def test_sweep_jsonl():
    text = '{"d": 2.0, "angle": 10, "target": 500}\n\n{"d": 1.0, "angle": 10, "target": 800}\n'
    rows = read_sweep_jsonl(io.StringIO(text))
    assert rows == [SweepSample(2.0, 10.0, 500.0), SweepSample(1.0, 10.0, 800.0)]
    with pytest.raises(ConfigurationError):
        read_sweep_jsonl(['{"d": 1.0}'])


def test_off_axis_angle():
    # LED at (0, 0, 1000) looking back along -z: on axis
    assert led_off_axis_angle(Rotation.identity(), (0, 0, -1), (0, 0, 1000)) == pytest.approx(0.0)
    assert led_off_axis_angle(Rotation.about_y(30), (0, 0, -1), (0, 0, 1000)) == pytest.approx(30.0)
