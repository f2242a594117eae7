"""Point-scatterer echo synthesis for the time-multiplexed MIMO array.

Each pulse is the sum, over scatterers, of the dechirped tone for the exact
bistatic path ``R_t + R_r``.  The target moves between pulses (every slot of
a burst sees the target at its own timestamp) but is frozen within a pulse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .arraygeom import N_ANTENNAS, N_TX, N_VIRTUAL, ArrayGeometry, channel_indices, perturb_geometry
from .errors import CoverageError, NumericalError
from .waveform import ChirpParams

log = logging.getLogger(__name__)

MIN_RANGE = 1e-6


@dataclass(frozen=True)
class Scene:
    """Scatterer positions (S, 3) in the target frame and complex reflectivities (S,)."""

    positions: np.ndarray
    reflectivity: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        refl = np.asarray(self.reflectivity, dtype=np.complex128).reshape(-1)
        if pos.shape[0] != refl.shape[0]:
            raise ValueError("positions and reflectivity lengths differ")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(refl))):
            raise ValueError("non-finite scatterer")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "reflectivity", refl)

    @classmethod
    def empty(cls) -> "Scene":
        return cls(np.zeros((0, 3)), np.zeros(0, complex))

    @classmethod
    def point(cls, position=(0.0, 0.0, 0.0), reflectivity=1.0) -> "Scene":
        return cls(np.asarray(position, float)[None, :], [reflectivity])

    def __len__(self):
        return self.positions.shape[0]

    def __add__(self, other: "Scene") -> "Scene":
        return Scene(np.vstack([self.positions, other.positions]),
                     np.concatenate([self.reflectivity, other.reflectivity]))

    def crop(self, lo, hi) -> "Scene":
        """Scatterers inside the axis-aligned box ``[lo, hi]``."""
        keep = np.all((self.positions >= lo) & (self.positions <= hi), axis=1)
        return Scene(self.positions[keep], self.reflectivity[keep])


@dataclass(frozen=True)
class Trajectory:
    """Position of the target-frame origin in the scene frame over time."""

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        pos = np.asarray(self.position, dtype=np.float64).reshape(-1, 3)
        vel = np.asarray(self.velocity, dtype=np.float64).reshape(-1, 3)
        if not (t.size == pos.shape[0] == vel.shape[0]) or t.size == 0:
            raise ValueError("trajectory arrays must be non-empty and of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    @classmethod
    def linear(cls, start, velocity, t0: float, t1: float, n: int = 2) -> "Trajectory":
        t = np.linspace(t0, t1, n)
        v = np.asarray(velocity, float)
        return cls(t, np.asarray(start, float) + (t - t0)[:, None] * v, np.tile(v, (n, 1)))

    @classmethod
    def stationary(cls, position=(0.0, 0.0, 0.0), t0: float = 0.0, t1: float = 1.0) -> "Trajectory":
        return cls.linear(position, (0.0, 0.0, 0.0), t0, t1)

    def covers(self, times) -> bool:
        times = np.asarray(times)
        return bool(times.size == 0 or (times.min() >= self.t[0] and times.max() <= self.t[-1]))

    def position_at(self, times) -> np.ndarray:
        """Piecewise-linear position at ``times``; raises :class:`CoverageError` outside the span."""
        times = np.asarray(times, dtype=np.float64)
        if not self.covers(times):
            raise CoverageError(
                f"timestamps [{times.min():.6g}, {times.max():.6g}] s outside trajectory "
                f"span [{self.t[0]:.6g}, {self.t[-1]:.6g}] s")
        if self.t.size == 1:
            return np.broadcast_to(self.position[0], times.shape + (3,)).copy()
        return np.stack([np.interp(times, self.t, self.position[:, k]) for k in range(3)], axis=-1)


@dataclass(frozen=True)
class ChannelErrorModel:
    """Per physical antenna (Tx 0..7, Rx 8..23) imbalance and phase-center error."""

    amplitude: np.ndarray = field(default_factory=lambda: np.ones(N_ANTENNAS))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(N_ANTENNAS))
    delay: np.ndarray = field(default_factory=lambda: np.zeros(N_ANTENNAS))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros((N_ANTENNAS, 3)))

    def __post_init__(self):
        for name, shape in (("amplitude", (N_ANTENNAS,)), ("phase", (N_ANTENNAS,)),
                            ("delay", (N_ANTENNAS,)), ("offsets", (N_ANTENNAS, 3))):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.amplitude <= 0):
            raise ValueError("amplitudes must be positive")

    @classmethod
    def zero(cls) -> "ChannelErrorModel":
        return cls()

    @classmethod
    def random(cls, rng: np.random.Generator, sigma_amplitude=0.1, sigma_phase=np.deg2rad(30.0),
               sigma_delay=20e-12, sigma_offset=2e-3) -> "ChannelErrorModel":
        """Gaussian draws; amplitudes are ``1 + sigma*N(0,1)`` clipped to stay positive."""
        amp = np.clip(1 + sigma_amplitude * rng.standard_normal(N_ANTENNAS), 0.05, None)
        return cls(amp, sigma_phase * rng.standard_normal(N_ANTENNAS),
                   sigma_delay * rng.standard_normal(N_ANTENNAS),
                   sigma_offset * rng.standard_normal((N_ANTENNAS, 3)))

    def channel_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Complex gain ``a_t*a_r*exp(j(phi_t+phi_r))`` and delay ``tau_t+tau_r`` per slot."""
        ti, ri = channel_indices()
        ri = ri + N_TX
        gain = self.amplitude[ti] * self.amplitude[ri] * np.exp(1j * (self.phase[ti] + self.phase[ri]))
        return gain, self.delay[ti] + self.delay[ri]


@dataclass(frozen=True, eq=False)
class RawDataCube:
    """Dechirped samples ``data[burst, slot, sample]`` and the metadata needed to image them."""

    data: np.ndarray
    params: ChirpParams
    burst_interval: float
    fingerprint: bytes = bytes(32)
    spreading_loss: bool = False
    noisy: bool = False
    seed: int = 0

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3 or d.shape[2] != self.params.n_samples:
            raise ValueError(f"cube shape {d.shape} inconsistent with {self.params.n_samples} samples")
        if len(self.fingerprint) != 32:
            raise ValueError("geometry fingerprint must be 32 bytes")
        object.__setattr__(self, "data", d)

    @property
    def n_bursts(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def pulse_times(self) -> np.ndarray:
        """(n_bursts, n_channels) start time of each pulse."""
        return pulse_times(self.n_bursts, self.burst_interval, self.params, self.n_channels)

    def with_data(self, data, **changes) -> "RawDataCube":
        return replace(self, data=data, **changes)


def pulse_times(n_bursts: int, burst_interval: float, params: ChirpParams,
                n_channels: int = N_VIRTUAL) -> np.ndarray:
    return (np.arange(n_bursts)[:, None] * burst_interval
            + np.arange(n_channels)[None, :] * params.prt)


@numba.njit(cache=True, nogil=True)
def _echo_kernel(tx, rx, origin, chan_gain, chan_delay, scat_pos, scat_amp,
                 f_start, slope, dt, c, spreading, out):
    n_pulse = tx.shape[0]
    n_scat = scat_pos.shape[0]
    n_samp = out.shape[1]
    min_range = np.inf
    two_pi = 2.0 * np.pi
    for p in range(n_pulse):
        for s in range(n_scat):
            px = scat_pos[s, 0] + origin[p, 0]
            py = scat_pos[s, 1] + origin[p, 1]
            pz = scat_pos[s, 2] + origin[p, 2]
            rt = np.sqrt((tx[p, 0] - px) ** 2 + (tx[p, 1] - py) ** 2 + (tx[p, 2] - pz) ** 2)
            rr = np.sqrt((rx[p, 0] - px) ** 2 + (rx[p, 1] - py) ** 2 + (rx[p, 2] - pz) ** 2)
            min_range = min(min_range, rt, rr)
            tau = (rt + rr) / c + chan_delay[p]
            a = chan_gain[p] * scat_amp[s]
            if spreading:
                a = a / (rt * rr)
            a = a * np.exp(-1j * two_pi * f_start * tau)
            z = np.exp(-1j * two_pi * slope * tau * dt)
            for k in range(n_samp):
                out[p, k] += a
                a = a * z
    return min_range


def _synthesize(scene: Scene, tx, rx, origins, gain, delay, params: ChirpParams,
                spreading_loss: bool) -> np.ndarray:
    out = np.zeros((tx.shape[0], params.n_samples), dtype=np.complex128)
    if len(scene) == 0:
        return out
    rmin = _echo_kernel(np.ascontiguousarray(tx), np.ascontiguousarray(rx),
                        np.ascontiguousarray(origins), np.ascontiguousarray(gain, dtype=np.complex128),
                        np.ascontiguousarray(delay, dtype=np.float64), scene.positions,
                        scene.reflectivity, params.f_start, params.slope, params.sample_interval,
                        params.c, bool(spreading_loss), out)
    if rmin < MIN_RANGE:
        raise NumericalError(f"scatterer within {rmin:.3g} m of an antenna")
    return out


def simulate_pulse(scene: Scene, target_origin, slot: int, geom: ArrayGeometry,
                   errors: ChannelErrorModel | None = None, params: ChirpParams = ChirpParams(),
                   spreading_loss: bool = False) -> np.ndarray:
    """Samples of one pulse on virtual channel ``slot`` with the target origin at ``target_origin``."""
    errors = errors or ChannelErrorModel.zero()
    real = perturb_geometry(geom, errors)
    ti, ri = channel_indices()
    gain, delay = errors.channel_terms()
    out = _synthesize(scene, real.tx_positions[ti[slot]][None], real.rx_positions[ri[slot]][None],
                      np.asarray(target_origin, float)[None], gain[slot:slot + 1],
                      delay[slot:slot + 1], params, spreading_loss)
    return out[0]


def simulate_collection(scene: Scene, trajectory: Trajectory, geom: ArrayGeometry,
                        errors: ChannelErrorModel | None = None, params: ChirpParams = ChirpParams(),
                        n_bursts: int = 1, burst_interval: float = 20e-3,
                        spreading_loss: bool = False) -> RawDataCube:
    """Full cube; pulse ``(b, k)`` is transmitted at ``b*burst_interval + k*prt``."""
    if n_bursts < 1:
        raise ValueError("n_bursts must be >= 1")
    if n_bursts > 1 and burst_interval < N_VIRTUAL * params.prt:
        raise ValueError("burst_interval shorter than one burst")
    errors = errors or ChannelErrorModel.zero()
    times = pulse_times(n_bursts, burst_interval, params)
    origins = trajectory.position_at(times.reshape(-1))
    real = perturb_geometry(geom, errors)
    ti, ri = channel_indices()
    gain, delay = errors.channel_terms()
    tx = np.tile(real.tx_positions[ti], (n_bursts, 1))
    rx = np.tile(real.rx_positions[ri], (n_bursts, 1))
    log.debug("simulating %d pulses x %d scatterers", tx.shape[0], len(scene))
    data = _synthesize(scene, tx, rx, origins, np.tile(gain, n_bursts), np.tile(delay, n_bursts),
                       params, spreading_loss)
    return RawDataCube(data.reshape(n_bursts, N_VIRTUAL, params.n_samples), params, burst_interval,
                       geom.fingerprint, spreading_loss=spreading_loss)


def add_noise(cube: RawDataCube, snr_db: float, seed: int = 0) -> RawDataCube:
    """Add complex white Gaussian noise at ``snr_db`` relative to the mean cube power.

    Every pulse draws from its own stream seeded by ``(seed, burst, slot)`` so
    the result does not depend on evaluation order.  ``snr_db = inf`` is a no-op.
    """
    if np.isposinf(snr_db):
        return cube
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite or +inf")
    p_sig = float(np.mean(np.abs(cube.data) ** 2))
    sigma = np.sqrt(p_sig / 10 ** (snr_db / 10) / 2)
    out = np.array(cube.data, dtype=np.complex128, copy=True)
    n = cube.params.n_samples
    for b in range(cube.n_bursts):
        for k in range(cube.n_channels):
            g = np.random.default_rng([seed, b, k])
            out[b, k] += sigma * (g.standard_normal(n) + 1j * g.standard_normal(n))
    return cube.with_data(out, noisy=True, seed=int(seed))
