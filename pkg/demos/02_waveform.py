"""FMCW chirp, beat signal and range compression.

A point 1.5 m away (3 m round trip) produces a single beat tone.  The
upsampled IFFT turns it into a sinc-shaped range profile whose peak sits at
the round-trip distance.
"""

import numpy as np

from misar.analysis import half_power_width
from misar.waveform import ChirpParams, beat_frequency, burst_duration, range_compress, sample_beat_signal

p = ChirpParams()
print(f"band {p.f_start / 1e9:.0f}-{p.f_stop / 1e9:.0f} GHz, bandwidth {p.bandwidth / 1e9:.0f} GHz")
print(f"range bin spacing c/2B = {p.range_resolution * 100:.3f} cm")
print(f"beat frequency for a 3 m path: {beat_frequency(3.0, p) / 1e6:.4f} MHz")
print(f"one burst of 128 chirps lasts {burst_duration(p) * 1e3:.2f} ms")

for window in ("NONE", "HANN"):
    prof = range_compress(sample_beat_signal(3.0, 1.0, p), p, window, upsample=8)
    mag = np.abs(prof.values)
    k = int(np.argmax(mag))
    width = half_power_width(mag, k, prof.bin_spacing / 2)
    print(f"{window:4s}: peak at {prof.path_axis[k]:.4f} m path, -3 dB range width {width * 100:.2f} cm")
