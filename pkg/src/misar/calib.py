"""Active array calibration from a 2D linear-stage scan.

A reference antenna on the stage visits every point ``q_j`` of a planar
grid facing the array; for each array antenna ``i`` the line-of-sight link
gives a delay, amplitude and phase::

    T_ij = |p_i - q_j| / c + tau_i
    A_ij = a_i / |p_i - q_j|**2
    phi_ij = 2*pi*|p_i - q_j| / lambda_c + phi_i        (wrapped)

where ``p_i`` is the true phase center (nominal + offset).  :func:`estimate`
inverts these per antenna: offset and delay by damped Gauss-Newton on the
delays, then amplitude by a log-linear fit and phase by a circular mean.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arraygeom import N_ANTENNAS, N_TX, ArrayGeometry
from .config import format_config, parse_config
from .errors import ConfigError, DataFormatError, IdentifiabilityError
from .simulator import ChannelErrorModel, RawDataCube
from .waveform import ChirpParams, range_compress, sample_beat_signal

log = logging.getLogger(__name__)

MIN_POINTS = 6


def wrap(phase):
    """Wrap to (-pi, pi]."""
    w = np.angle(np.exp(1j * np.asarray(phase)))
    return np.where(w <= -np.pi, w + 2 * np.pi, w)


@dataclass(frozen=True)
class ScanGrid:
    """Planar stage grid in the x-z plane, ``plane_offset`` meters in front of the array."""

    x_extent: float = 1.0
    z_extent: float = 1.0
    step: float = 0.01
    plane_offset: float = 1.5

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("scan step must be positive")
        if self.x_extent < 0 or self.z_extent < 0:
            raise ConfigError("scan extents must be non-negative")

    @property
    def nx(self) -> int:
        return int(round(self.x_extent / self.step)) + 1

    @property
    def nz(self) -> int:
        return int(round(self.z_extent / self.step)) + 1

    def points(self, array_y: float) -> np.ndarray:
        """(nx*nz, 3) stage positions, x fastest."""
        x = (np.arange(self.nx) - (self.nx - 1) / 2) * self.step
        z = (np.arange(self.nz) - (self.nz - 1) / 2) * self.step
        zz, xx = np.meshgrid(z, x, indexing="ij")
        return np.column_stack([xx.ravel(), np.full(xx.size, array_y + self.plane_offset), zz.ravel()])

    @classmethod
    def desk(cls) -> "ScanGrid":
        """11 x 11 points at 10 cm: the 1 m x 1 m scan decimated for quick runs."""
        return cls(step=0.1)


@dataclass(frozen=True)
class LinkObservation:
    antenna: int
    grid_index: int
    T: float
    A: float
    phi: float


@dataclass(frozen=True)
class ObservationSet:
    """Columnar storage for many :class:`LinkObservation`; iterating yields them one by one."""

    antenna: np.ndarray
    grid_index: np.ndarray
    points: np.ndarray
    T: np.ndarray
    A: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return self.antenna.size

    def __iter__(self):
        for k in range(len(self)):
            yield LinkObservation(int(self.antenna[k]), int(self.grid_index[k]), float(self.T[k]),
                                  float(self.A[k]), float(self.phi[k]))

    def select(self, mask) -> "ObservationSet":
        return ObservationSet(self.antenna[mask], self.grid_index[mask], self.points[mask],
                              self.T[mask], self.A[mask], self.phi[mask])

    def to_csv(self) -> str:
        lines = ["i,j,x_j,y_j,z_j,T,A,phi"]
        for k in range(len(self)):
            vals = (*self.points[k], self.T[k], self.A[k], self.phi[k])
            lines.append(f"{int(self.antenna[k])},{int(self.grid_index[k])},"
                         + ",".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "ObservationSet":
        rows = [ln for ln in text.splitlines() if ln.strip()]
        if not rows or rows[0].replace(" ", "") != "i,j,x_j,y_j,z_j,T,A,phi":
            raise DataFormatError("observation CSV must start with header i,j,x_j,y_j,z_j,T,A,phi")
        try:
            arr = np.array([[float(v) for v in r.split(",")] for r in rows[1:]]).reshape(-1, 8)
        except ValueError as exc:
            raise DataFormatError(f"malformed observation CSV: {exc}") from exc
        return cls(arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2:5], arr[:, 5], arr[:, 6], arr[:, 7])


def _array_y(geom: ArrayGeometry) -> float:
    return -geom.arc_radius


def _true_positions(geom: ArrayGeometry, errors: ChannelErrorModel) -> np.ndarray:
    return geom.antenna_positions + errors.offsets


def simulate_scan(geom: ArrayGeometry, truth: ChannelErrorModel | None = None,
                  grid: ScanGrid = ScanGrid(), params: ChirpParams = ChirpParams(),
                  amplitude_exponent: float = 2.0, reference_delay: float = 0.0) -> ObservationSet:
    """Noise-free link observables for all 24 antennas over the grid.

    ``reference_delay`` models the stage cable; :func:`estimate` must be told
    the same value to remove it.
    """
    truth = truth or ChannelErrorModel.zero()
    q = grid.points(_array_y(geom))
    p = _true_positions(geom, truth)
    d = np.linalg.norm(p[:, None, :] - q[None, :, :], axis=-1)
    if np.min(d) < 1e-9:
        raise ValueError("grid point coincides with an antenna")
    n_ant, n_pts = d.shape
    T = d / params.c + truth.delay[:, None] + reference_delay
    A = truth.amplitude[:, None] / d ** amplitude_exponent
    phi = wrap(2 * np.pi * d / params.wavelength + truth.phase[:, None])
    ant = np.repeat(np.arange(n_ant), n_pts)
    j = np.tile(np.arange(n_pts), n_ant)
    return ObservationSet(ant, j, q[j], T.ravel(), A.ravel(), phi.ravel())


def simulate_link_pulses(geom: ArrayGeometry, truth: ChannelErrorModel | None = None,
                         grid: ScanGrid = ScanGrid(), params: ChirpParams = ChirpParams(),
                         amplitude_exponent: float = 2.0, snr_db: float = np.inf,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Dechirped one-way link pulses for every (antenna, grid point).

    Returns ``(pulses, antenna, grid_index, points)`` with ``pulses`` of shape
    (K, n_samples).  The pulses use the calibration phase convention (phase
    grows with path), so the carrier phase of ``tau_i`` shows up in the
    extracted phase as ``2*pi*f_center*tau_i``.  ``snr_db`` is per sample,
    relative to each link's own signal power.
    """
    truth = truth or ChannelErrorModel.zero()
    q = grid.points(_array_y(geom))
    p = _true_positions(geom, truth)
    rng = np.random.default_rng(seed)
    pulses, ants, idx, pts = [], [], [], []
    for i in range(N_ANTENNAS):
        for j, qj in enumerate(q):
            d = float(np.linalg.norm(p[i] - qj))
            amp = truth.amplitude[i] / d ** amplitude_exponent * np.exp(-1j * truth.phase[i])
            s = np.conj(sample_beat_signal(d, amp, params, extra_delay=truth.delay[i]))
            if np.isfinite(snr_db):
                sigma = abs(amp) / np.sqrt(2 * 10 ** (snr_db / 10))
                s = s + sigma * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
            pulses.append(s)
            ants.append(i)
            idx.append(j)
            pts.append(qj)
    return np.array(pulses), np.array(ants), np.array(idx), np.array(pts)


def extract_observables(pulses, antenna, grid_index, points, params: ChirpParams = ChirpParams(),
                        upsample: int = 8, min_snr_db: float = 10.0) -> ObservationSet:
    """Peak delay, amplitude and phase of each compressed link pulse.

    The delay comes from a parabolic fit to the magnitude around the peak
    bin; the amplitude from the fitted peak divided by the coherent gain.
    Pulses whose peak is not ``min_snr_db`` above the profile median are
    dropped with a warning.
    """
    pulses = np.atleast_2d(np.asarray(pulses, dtype=np.complex128))
    prof = range_compress(np.conj(pulses), params, "NONE", upsample)
    mag = np.abs(prof.values)
    m = mag.shape[1]
    k = np.argmax(mag, axis=1)
    rows = np.arange(mag.shape[0])
    peak = mag[rows, k]
    floor = np.median(mag, axis=1)
    ok = (peak > 0) & (peak ** 2 >= 10 ** (min_snr_db / 10) * floor ** 2)
    if np.any(~ok):
        warnings.warn(f"dropped {np.count_nonzero(~ok)} link pulse(s) with no peak above the noise floor",
                      stacklevel=2)
    ym, y0, yp = mag[rows, (k - 1) % m], peak, mag[rows, (k + 1) % m]
    den = ym - 2 * y0 + yp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den < 0, 0.5 * (ym - yp) / den, 0.0)
    peak_mag = y0 - 0.25 * (ym - yp) * off
    path = (k + off) * prof.bin_spacing
    gain = params.n_samples / np.sqrt(m)
    T = path / params.c
    A = peak_mag / gain
    phi = wrap(-np.angle(prof.values[rows, k]))
    return ObservationSet(np.asarray(antenna)[ok], np.asarray(grid_index)[ok],
                          np.asarray(points, dtype=float).reshape(-1, 3)[ok], T[ok], A[ok], phi[ok])


@dataclass(frozen=True, eq=False)
class CalibrationSolution:
    errors: ChannelErrorModel
    residual_norms: np.ndarray
    iterations: np.ndarray
    final_cost: np.ndarray
    converged: np.ndarray
    fingerprint: bytes = bytes(32)
    notes: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return bool(np.all(self.converged))

    @classmethod
    def identity(cls, geom: ArrayGeometry) -> "CalibrationSolution":
        z = np.zeros(N_ANTENNAS)
        return cls(ChannelErrorModel.zero(), z, z.astype(int), z, np.ones(N_ANTENNAS, bool),
                   geom.fingerprint)


def _check_identifiable(q: np.ndarray, antenna: int) -> None:
    if q.shape[0] < MIN_POINTS:
        raise IdentifiabilityError(f"antenna {antenna}: {q.shape[0]} grid points, need >= {MIN_POINTS}")
    sv = np.linalg.svd(q - q.mean(axis=0), compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise IdentifiabilityError(f"antenna {antenna}: grid points are collinear")


def _fit_position_delay(p0, q, ct, weights, max_iter=100, rtol=1e-10):
    """Damped Gauss-Newton (Levenberg-Marquardt) for ``|p0 + d - q| + c*tau = c*T``.

    Unknowns ``(dx, dy, dz, c*tau)`` in meters.  Returns the solution, the
    iteration count, final cost and a convergence flag.
    """
    theta = np.zeros(4)
    w = np.sqrt(weights)

    def residual(th):
        diff = p0 + th[:3] - q
        rng = np.linalg.norm(diff, axis=1)
        return w * (rng + th[3] - ct), diff / rng[:, None]

    r, u = residual(theta)
    cost = 0.5 * r @ r
    lam = 1e-3
    for it in range(1, max_iter + 1):
        J = w[:, None] * np.column_stack([u, np.ones(len(q))])
        g = J.T @ r
        H = J.T @ J
        while True:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -g)
            r_new, u_new = residual(theta + step)
            new_cost = 0.5 * r_new @ r_new
            if new_cost <= cost or lam > 1e12:
                break
            lam *= 10
        if new_cost > cost:
            return theta, it, cost, False
        theta = theta + step
        r, u = r_new, u_new
        change = cost - new_cost
        cost = new_cost
        lam = max(lam / 10, 1e-12)
        if cost == 0 or change <= rtol * cost or np.linalg.norm(step) < 1e-15:
            return theta, it, cost, True
    return theta, max_iter, cost, False


def estimate(obs: ObservationSet, geom: ArrayGeometry, params: ChirpParams = ChirpParams(),
             weights: np.ndarray | None = None, amplitude_exponent: float = 2.0,
             delay_in_phase: bool = False, reference_delay: float = 0.0,
             reference_antennas: tuple[int, ...] = ()) -> CalibrationSolution:
    """Per-antenna least-squares estimate of the channel error model.

    ``delay_in_phase`` says the phase observations also carry the carrier
    phase of the channel delay (true for pulse-derived observations); the
    estimated delay is then removed from the phase before averaging.
    ``reference_antennas`` fixes the gauge of each role group (Tx, Rx): the
    named antenna's delay, phase and amplitude become the zero/unit reference
    of its group.
    """
    c = params.c
    k_c = 2 * np.pi / params.wavelength
    nominal = geom.antenna_positions
    amp = np.ones(N_ANTENNAS)
    phase = np.zeros(N_ANTENNAS)
    delay = np.zeros(N_ANTENNAS)
    offsets = np.zeros((N_ANTENNAS, 3))
    resid = np.zeros(N_ANTENNAS)
    iters = np.zeros(N_ANTENNAS, int)
    costs = np.zeros(N_ANTENNAS)
    conv = np.ones(N_ANTENNAS, bool)
    w_all = np.ones(len(obs)) if weights is None else np.asarray(weights, float)
    for i in range(N_ANTENNAS):
        sel = obs.antenna == i
        if not np.any(sel):
            log.warning("antenna %d has no observations; left at identity", i)
            conv[i] = False
            continue
        q = obs.points[sel]
        _check_identifiable(q, i)
        ct = c * (obs.T[sel] - reference_delay)
        theta, iters[i], costs[i], conv[i] = _fit_position_delay(nominal[i], q, ct, w_all[sel])
        if not conv[i]:
            log.warning("antenna %d: delay/position fit did not converge", i)
        offsets[i] = theta[:3]
        delay[i] = theta[3] / c
        rng = np.linalg.norm(nominal[i] + offsets[i] - q, axis=1)
        resid[i] = np.sqrt(np.mean((rng + theta[3] - ct) ** 2)) / c
        amp[i] = np.exp(np.mean(np.log(obs.A[sel] * rng ** amplitude_exponent)))
        psi = obs.phi[sel] - k_c * rng
        if delay_in_phase:
            psi = psi - 2 * np.pi * params.f_center * delay[i]
        phase[i] = float(np.angle(np.mean(np.exp(1j * psi))))
    for ref in reference_antennas:
        group = slice(0, N_TX) if ref < N_TX else slice(N_TX, N_ANTENNAS)
        delay[group] -= delay[ref]
        phase[group] = wrap(phase[group] - phase[ref])
        amp[group] /= amp[ref]
    errors = ChannelErrorModel(amp, phase, delay, offsets)
    return CalibrationSolution(errors, resid, iters, costs, conv, geom.fingerprint)


def compensate(cube: RawDataCube, solution: CalibrationSolution) -> RawDataCube:
    """Undo per-channel gain, phase and delay.  Phase-center offsets are not
    applied to the data; image with ``perturb_geometry(geom, solution.errors)``."""
    if cube.fingerprint != solution.fingerprint:
        raise DataFormatError("calibration solution was estimated for a different array geometry")
    gain, tau = solution.errors.channel_terms()
    p = cube.params
    t = p.sample_times
    realign = np.exp(2j * np.pi * (p.f_start * tau[:, None] + p.slope * tau[:, None] * t[None, :]))
    data = cube.data * (realign / gain[:, None])[None, :, :]
    return cube.with_data(data)


def solution_to_text(sol: CalibrationSolution) -> str:
    e = sol.errors
    items = [("calib.fingerprint", sol.fingerprint.hex()), ("calib.converged", int(sol.ok))]
    for i in range(N_ANTENNAS):
        items += [(f"calib.{i}.amplitude", float(e.amplitude[i])), (f"calib.{i}.phase", float(e.phase[i])),
                  (f"calib.{i}.delay", float(e.delay[i])), (f"calib.{i}.offset", e.offsets[i]),
                  (f"calib.{i}.residual", float(sol.residual_norms[i])),
                  (f"calib.{i}.iterations", int(sol.iterations[i])),
                  (f"calib.{i}.cost", float(sol.final_cost[i])),
                  (f"calib.{i}.converged", int(sol.converged[i]))]
    return format_config(items)


def solution_from_text(text: str) -> CalibrationSolution:
    cfg = parse_config(text).section("calib")
    try:
        fp = bytes.fromhex(cfg.get_str("fingerprint"))
        rows = range(N_ANTENNAS)
        errors = ChannelErrorModel([cfg.get_float(f"{i}.amplitude") for i in rows],
                                   [cfg.get_float(f"{i}.phase") for i in rows],
                                   [cfg.get_float(f"{i}.delay") for i in rows],
                                   [cfg.get_vector(f"{i}.offset") for i in rows])
        return CalibrationSolution(errors,
                                   np.array([cfg.get_float(f"{i}.residual") for i in rows]),
                                   np.array([cfg.get_int(f"{i}.iterations") for i in rows]),
                                   np.array([cfg.get_float(f"{i}.cost") for i in rows]),
                                   np.array([cfg.get_bool(f"{i}.converged") for i in rows]), fp)
    except (ConfigError, ValueError) as exc:
        raise DataFormatError(f"malformed calibration file: {exc}") from exc
