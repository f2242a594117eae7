import numpy as np
import pytest

from misar.arraygeom import N_ANTENNAS, N_TX
from misar.calib import CalibrationSolution, compensate
from misar.errors import CoverageError, NumericalError
from misar.simulator import (ChannelErrorModel, RawDataCube, Scene, Trajectory, add_noise,
                             simulate_collection, simulate_pulse)
from misar.waveform import range_compress, sample_beat_signal

from conftest import moving_point_cube


def _peak_path(samples, params):
    prof = range_compress(samples, params, upsample=8)
    mag = np.abs(prof.values)
    k = int(np.argmax(mag))
    a, b, c = mag[k - 1], mag[k], mag[k + 1]
    return (k + 0.5 * (a - c) / (a - 2 * b + c)) * prof.bin_spacing


def test_empty_scene(geom, params):
    s = simulate_pulse(Scene.empty(), (0, 0, 0), 5, geom, params=params)
    assert s.shape == (201,)
    assert not np.any(s)


def test_center_point_is_three_meter_tone(geom, params):
    expected = sample_beat_signal(3.0, 1.0, params)
    for slot in (0, 37, 127):
        s = simulate_pulse(Scene.point(), (0, 0, 0), slot, geom, params=params)
        np.testing.assert_allclose(s, expected, atol=1e-9)
        assert _peak_path(s, params) == pytest.approx(3.0, abs=2e-4)


def test_tx_delay_shifts_peak(geom, params):
    delay = np.zeros(N_ANTENNAS)
    delay[0] = 100e-12
    err = ChannelErrorModel(delay=delay)
    base = _peak_path(simulate_pulse(Scene.point(), (0, 0, 0), 3, geom, params=params), params)
    shifted = _peak_path(simulate_pulse(Scene.point(), (0, 0, 0), 3, geom, err, params), params)
    assert shifted - base == pytest.approx(params.c * 100e-12, abs=1e-3)
    assert shifted - base == pytest.approx(0.030, abs=1e-3)


def test_collection_matches_pulses(geom, params):
    scene = Scene([(0.01, 0.02, -0.03), (-0.02, 0.0, 0.05)], [1.0, 0.5j])
    cube = simulate_collection(scene, Trajectory.stationary((0.1, 0, 0), 0, 1), geom, params=params)
    for slot in range(128):
        np.testing.assert_allclose(cube.data[0, slot], simulate_pulse(scene, (0.1, 0, 0), slot, geom, params=params),
                                   rtol=0, atol=1e-12)


def test_displacement_within_burst(geom, params):
    v = 0.5
    traj = Trajectory.linear((0, 0, 0), (v, 0, 0), 0.0, 1.0)
    pos = traj.position_at(np.array([0.0, 128 * params.prt]))
    assert pos[1, 0] - pos[0, 0] == pytest.approx(2.56e-3, rel=1e-12)


def test_synthetic_aperture():
    from misar.pipeline import point_target_spec
    assert point_target_spec().synthetic_aperture() == pytest.approx(63 * 0.02 * 0.55 + 127 * 40e-6 * 0.55)
    assert 63 * 0.02 * 0.55 == pytest.approx(0.70, abs=0.01)


def test_superposition(geom, params):
    a = Scene([(0.0, 0.0, 0.0)], [1.0])
    b = Scene([(0.03, -0.01, 0.02), (-0.02, 0.04, 0.0)], [0.3 - 0.2j, 2.0])
    cube_a, traj = moving_point_cube(geom, params, 2)
    kw = dict(params=params, n_bursts=2)
    ca = simulate_collection(a, traj, geom, **kw).data
    cb = simulate_collection(b, traj, geom, **kw).data
    cab = simulate_collection(a + b, traj, geom, **kw).data
    assert np.max(np.abs(cab - ca - cb)) <= 1e-12 * np.max(np.abs(cab))


def test_reflectivity_phase(geom, params):
    theta = 0.7
    s1 = simulate_pulse(Scene.point((0.01, 0, 0), 1.0), (0, 0, 0), 9, geom, params=params)
    s2 = simulate_pulse(Scene.point((0.01, 0, 0), np.exp(1j * theta)), (0, 0, 0), 9, geom, params=params)
    np.testing.assert_allclose(s2, s1 * np.exp(1j * theta), atol=1e-12)


def test_noise_inf_is_noop(geom, params):
    cube, _ = moving_point_cube(geom, params, 1)
    assert add_noise(cube, np.inf) is cube


def test_noise_power(params):
    data = np.ones((4, 128, 201), complex)
    cube = RawDataCube(data, params, 20e-3)
    noisy = add_noise(cube, 0.0, seed=5)
    assert data.size >= 1e5
    p = np.mean(np.abs(noisy.data - data) ** 2)
    assert p == pytest.approx(1.0, rel=0.05)
    assert noisy.noisy and noisy.seed == 5


def test_noise_seed_determinism(params):
    cube = RawDataCube(np.ones((2, 128, 201), complex), params, 20e-3)
    np.testing.assert_array_equal(add_noise(cube, 10, 3).data, add_noise(cube, 10, 3).data)
    assert not np.array_equal(add_noise(cube, 10, 3).data, add_noise(cube, 10, 4).data)


def test_compensation_round_trip(geom, params):
    rng = np.random.default_rng(11)
    err = ChannelErrorModel.random(rng)
    # phase-center offsets are imaged around, not compensated; keep them in both cubes
    err_no_off = ChannelErrorModel(offsets=err.offsets)
    cube_e, traj = moving_point_cube(geom, params, 2, errors=err)
    cube_0, _ = moving_point_cube(geom, params, 2, errors=err_no_off)
    z = np.zeros(N_ANTENNAS)
    sol = CalibrationSolution(err, z, z.astype(int), z, np.ones(N_ANTENNAS, bool), geom.fingerprint)
    comp = compensate(cube_e, sol)
    assert np.max(np.abs(comp.data - cube_0.data)) <= 1e-9 * np.max(np.abs(cube_0.data))


def test_channel_terms():
    err = ChannelErrorModel(amplitude=np.arange(1, 25, dtype=float), delay=np.arange(24) * 1e-12)
    gain, delay = err.channel_terms()
    # slot 16*2 + 3 pairs Tx2 with Rx3 (antenna id 11)
    assert gain[35].real == pytest.approx(3 * (N_TX + 3 + 1))
    assert delay[35] == pytest.approx((2 + N_TX + 3) * 1e-12)


def test_errors(geom, params):
    with pytest.raises(CoverageError):
        simulate_collection(Scene.point(), Trajectory.stationary((0, 0, 0), 0, 0.01), geom, params=params,
                            n_bursts=2)
    with pytest.raises(NumericalError):
        simulate_pulse(Scene.point(geom.tx_positions[0]), (0, 0, 0), 0, geom, params=params)
    with pytest.raises(ValueError):
        simulate_collection(Scene.point(), Trajectory.stationary(), geom, params=params, n_bursts=2,
                            burst_interval=1e-3)
    with pytest.raises(ValueError):
        Scene([(0, 0, np.nan)], [1.0])
    with pytest.raises(ValueError):
        ChannelErrorModel(amplitude=np.zeros(N_ANTENNAS))
