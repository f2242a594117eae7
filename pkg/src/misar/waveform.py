"""FMCW chirp model, dechirped beat signals and range compression.

Ranges on the compressed axis are *total* propagation path (Tx -> target ->
Rx) unless a function says otherwise; a monostatic target at 1.5 m sits at
3.0 m of total path.

The dechirped sample for a path delay ``tau`` is modeled as::

    s[n] = A * exp(-j*2*pi*(f_start*tau + slope*tau*t_n)),   t_n = n*T/(N-1)

i.e. complex (I/Q) sampling with the residual video phase neglected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import windows

from .config import Config
from .errors import ConfigError

C = 299792458.0

UPSAMPLE_FACTORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class ChirpParams:
    f_start: float = 22e9
    f_stop: float = 26e9
    pulse_width: float = 30e-6
    prt: float = 40e-6
    n_samples: int = 201
    c: float = C

    def __post_init__(self):
        if not self.f_stop > self.f_start > 0:
            raise ConfigError("need f_stop > f_start > 0")
        if not self.pulse_width > 0 or self.prt < self.pulse_width:
            raise ConfigError("need prt >= pulse_width > 0")
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ConfigError("n_samples must be an integer >= 2")
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def bandwidth(self) -> float:
        return self.f_stop - self.f_start

    @property
    def slope(self) -> float:
        return self.bandwidth / self.pulse_width

    @property
    def f_center(self) -> float:
        return 0.5 * (self.f_start + self.f_stop)

    @property
    def wavelength(self) -> float:
        return self.c / self.f_center

    @property
    def sample_interval(self) -> float:
        return self.pulse_width / (self.n_samples - 1)

    @property
    def sample_times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.sample_interval

    @property
    def range_resolution(self) -> float:
        """One-way range resolution c / 2B."""
        return self.c / (2 * self.bandwidth)

    @property
    def unambiguous_path(self) -> float:
        """Largest total path whose beat frequency stays below the complex sample rate."""
        return self.c * (self.n_samples - 1) / self.bandwidth

    @classmethod
    def from_config(cls, cfg: Config, prefix: str = "chirp") -> "ChirpParams":
        sec = cfg.section(prefix)
        d = cls()
        return cls(f_start=sec.get_float("f_start", d.f_start),
                   f_stop=sec.get_float("f_stop", d.f_stop),
                   pulse_width=sec.get_float("pulse_width", d.pulse_width),
                   prt=sec.get_float("prt", d.prt),
                   n_samples=sec.get_int("n_samples", d.n_samples))

    def to_items(self, prefix: str = "chirp") -> list[tuple[str, object]]:
        return [(f"{prefix}.f_start", self.f_start), (f"{prefix}.f_stop", self.f_stop),
                (f"{prefix}.pulse_width", self.pulse_width), (f"{prefix}.prt", self.prt),
                (f"{prefix}.n_samples", self.n_samples)]


def beat_frequency(total_path: float, params: ChirpParams = ChirpParams()) -> float:
    if total_path < 0:
        raise ValueError(f"total path must be non-negative, got {total_path}")
    return params.slope * total_path / params.c


def sample_beat_signal(total_path, amplitude=1.0, params: ChirpParams = ChirpParams(),
                       extra_delay: float = 0.0) -> np.ndarray:
    """Dechirped samples for one scatterer path (or an array of paths, summed).

    Paths beyond :attr:`ChirpParams.unambiguous_path` alias; a warning is issued.
    """
    paths = np.atleast_1d(np.asarray(total_path, dtype=np.float64))
    amps = np.broadcast_to(np.asarray(amplitude, dtype=np.complex128), paths.shape)
    if np.any(paths + extra_delay * params.c >= params.unambiguous_path):
        warnings.warn("beat frequency beyond the sampled band; echo will alias", stacklevel=2)
    tau = paths / params.c + extra_delay
    t = params.sample_times
    phase = -2j * np.pi * (params.f_start * tau[:, None] + params.slope * tau[:, None] * t[None, :])
    return np.sum(amps[:, None] * np.exp(phase), axis=0)


@dataclass(frozen=True)
class RangeProfile:
    """Compressed samples over the last axis with their total-path axis.

    The bins are time-centered: a scatterer at total path ``p`` produces a
    peak at ``p`` whose phase is ``-2*pi*f_center*p/c`` (plus its amplitude
    phase), which is what the back-projection phase compensation expects.
    """

    values: np.ndarray
    path_axis: np.ndarray
    upsample: int
    window: str

    @property
    def bin_spacing(self) -> float:
        return float(self.path_axis[1] - self.path_axis[0])

    @property
    def range_axis(self) -> np.ndarray:
        """One-way (monostatic-equivalent) range, path / 2."""
        return self.path_axis / 2


def _window(name: str, n: int) -> np.ndarray | None:
    name = name.upper()
    if name == "NONE":
        return None
    if name == "HANN":
        return windows.hann(n, sym=True)
    raise ValueError(f"unknown window {name!r} (NONE or HANN)")


def range_compress(samples, params: ChirpParams = ChirpParams(), window: str = "NONE",
                   upsample: int = 8) -> RangeProfile:
    """Zero-padded inverse DFT of the fast-time samples (last axis).

    The transform length is ``upsample * (N - 1)`` so the bins fall exactly on
    multiples of ``c / (B * upsample)`` of total path.  For ``upsample == 1``
    the final sample coincides in phase with the first at every bin
    frequency and is folded onto it; that keeps the DFT exact but means
    Parseval only holds for ``upsample >= 2``.  Scaling is orthonormal.
    """
    if upsample not in UPSAMPLE_FACTORS:
        raise ValueError(f"upsample must be one of {UPSAMPLE_FACTORS}")
    x = np.asarray(samples, dtype=np.complex128)
    n = params.n_samples
    if x.shape[-1] != n:
        raise ValueError(f"expected {n} samples on the last axis, got {x.shape[-1]}")
    w = _window(window, n)
    if w is not None:
        x = x * w
    m = upsample * (n - 1)
    if upsample == 1:
        folded = x[..., :-1].copy()
        folded[..., 0] += x[..., -1]
        x = folded
    prof = np.fft.ifft(x, n=m, axis=-1, norm="ortho")
    k = np.arange(m)
    prof *= np.exp(-1j * np.pi * k / upsample)
    path = k * params.c / (params.bandwidth * upsample)
    return RangeProfile(prof, path, upsample, window.upper())


def burst_schedule(params: ChirpParams = ChirpParams(), n_channels: int = 128) -> np.ndarray:
    """Start time of each time-multiplexed slot within one burst; burst length is ``n_channels * prt``."""
    if n_channels < 1:
        raise ValueError("n_channels must be >= 1")
    return np.arange(n_channels) * params.prt


def burst_duration(params: ChirpParams = ChirpParams(), n_channels: int = 128) -> float:
    if n_channels < 1:
        raise ValueError("n_channels must be >= 1")
    return n_channels * params.prt
