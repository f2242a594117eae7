import numpy as np
import pytest

from misar.analysis import half_power_width
from misar.errors import ConfigError
from misar.waveform import (C, ChirpParams, beat_frequency, burst_duration, burst_schedule,
                            range_compress, sample_beat_signal)


def test_derived_quantities(params):
    assert params.bandwidth == 4e9
    assert params.slope == pytest.approx(4e9 / 30e-6)
    assert params.f_center == 24e9
    assert params.wavelength == pytest.approx(12.4913e-3, abs=1e-7)
    assert params.range_resolution == pytest.approx(0.03747, abs=1e-5)


def test_beat_frequency_three_meters(params):
    assert beat_frequency(3.0, params) == pytest.approx(1.3343e6, rel=1e-4)
    with pytest.raises(ValueError):
        beat_frequency(-1.0, params)


def test_invalid_chirp():
    with pytest.raises(ConfigError):
        ChirpParams(f_start=26e9, f_stop=22e9)
    with pytest.raises(ConfigError):
        ChirpParams(prt=10e-6)
    with pytest.raises(ConfigError):
        ChirpParams(n_samples=1)


def test_point_profile_peak_width_and_sidelobe(params):
    path = 3.0
    prof = range_compress(sample_beat_signal(path, 1.0, params), params, "NONE", 8)
    mag = np.abs(prof.values)
    k = int(np.argmax(mag))
    assert abs(prof.path_axis[k] - path) <= prof.bin_spacing
    # one-way range width
    width = half_power_width(mag, k, prof.bin_spacing / 2)
    assert width == pytest.approx(0.0332, rel=0.10)
    # first sidelobe of the rectangular window
    right = mag[k:]
    null = np.argmax(np.diff(right) > 0)
    side = right[null:].max() / mag[k]
    assert 20 * np.log10(side) == pytest.approx(-13.3, abs=0.5)


def test_hann_lowers_sidelobes(params):
    s = sample_beat_signal(2.0, 1.0, params)
    mag = np.abs(range_compress(s, params, "HANN", 8).values)
    k = int(np.argmax(mag))
    right = mag[k:]
    null = np.argmax(np.diff(right) > 0)
    assert 20 * np.log10(right[null:].max() / mag[k]) < -25
    with pytest.raises(ValueError):
        range_compress(s, params, "KAISER")


def test_linearity(params):
    rng = np.random.default_rng(3)
    a = rng.standard_normal(201) + 1j * rng.standard_normal(201)
    b = rng.standard_normal(201) + 1j * rng.standard_normal(201)
    for up in (1, 2, 8):
        lhs = range_compress(2 * a - 3j * b, params, upsample=up).values
        rhs = 2 * range_compress(a, params, upsample=up).values - 3j * range_compress(b, params, upsample=up).values
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(lhs).max())


@pytest.mark.parametrize("up", [2, 4, 8])
def test_parseval(params, up):
    rng = np.random.default_rng(up)
    x = rng.standard_normal(201) + 1j * rng.standard_normal(201)
    y = range_compress(x, params, upsample=up).values
    # zero-padding to M samples with orthonormal scaling keeps the energy
    assert np.sum(np.abs(y) ** 2) == pytest.approx(np.sum(np.abs(x) ** 2), rel=1e-12)


def test_bad_upsample_and_length(params):
    with pytest.raises(ValueError):
        range_compress(np.zeros(201), params, upsample=3)
    with pytest.raises(ValueError):
        range_compress(np.zeros(200), params)


def test_alias_warning(params):
    with pytest.warns(UserWarning):
        sample_beat_signal(params.unambiguous_path + 0.1, 1.0, params)


def test_burst_timing(params):
    assert burst_duration(params, 128) == 5.12e-3
    assert burst_duration(params, 1) == 40e-6
    sched = burst_schedule(params, 128)
    assert sched.size == 128
    assert sched[64] == pytest.approx(2.56e-3, abs=1e-15)
    with pytest.raises(ValueError):
        burst_schedule(params, 0)


def test_time_centered_phase(params):
    # the compressed peak carries -2*pi*f_center*path/c
    path = 2.5
    prof = range_compress(sample_beat_signal(path, 1.0, params), params, upsample=8)
    k = int(round(path / prof.bin_spacing))
    assert prof.path_axis[k] == pytest.approx(path, abs=prof.bin_spacing / 2)
    # the kernel is real within the mainlobe, so a nearby bin shares the peak phase
    expected = np.angle(np.exp(-2j * np.pi * params.f_center * path / C))
    got = np.angle(prof.values[k])
    assert abs(np.angle(np.exp(1j * (got - expected)))) < 0.05
