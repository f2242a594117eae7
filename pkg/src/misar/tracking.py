"""Constant-velocity Kalman tracking of the target reference point.

Each axis is an independent 2-state (position, velocity) filter.  A
measurement axis whose innovation exceeds ``gate_sigma`` standard deviations
is rejected and the filter coasts on its prediction for that axis.  After
``max_coast`` consecutive rejections the axis is assumed lost and is
re-acquired at the latest fix with its velocity uncertainty reset.

:func:`filter_track` runs the forward filter and, by default, a
Rauch-Tung-Striebel backward pass; image formation is offline, so the
trajectory handed to the imager is the smoothed one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DataFormatError, NumericalError
from .simulator import Trajectory


@dataclass(frozen=True)
class TrackMeasurement:
    t: float
    position: np.ndarray
    valid: bool = True


@dataclass(frozen=True)
class TrackState:
    """``x[axis] = (position, velocity)``, ``P[axis]`` its 2x2 covariance, at time ``t``."""

    x: np.ndarray
    P: np.ndarray
    t: float

    @property
    def position(self) -> np.ndarray:
        return self.x[:, 0]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[:, 1]


@dataclass(frozen=True)
class TrackingTuning:
    accel_noise: float = 0.1      # m/s^2, white-acceleration spectral density is its square
    meas_sigma: float = 0.01      # m
    gate_sigma: float = 3.0
    smooth: bool = True
    max_coast: int = 3            # consecutive gate rejections before an axis is re-acquired


def _check_pd(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)) or np.max(np.abs(P - np.swapaxes(P, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(P))):
        raise NumericalError("covariance is not symmetric")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc


def _transition(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q * np.array([[dt ** 3 / 3, dt ** 2 / 2], [dt ** 2 / 2, dt]])
    return F, Q


def _predict(state: TrackState, t: float, q: float):
    dt = t - state.t
    F, Q = _transition(dt, q)
    x = state.x @ F.T
    P = F @ state.P @ F.T + Q
    return x, P


def _step(state: TrackState, measurement: TrackMeasurement, q: float, r: float, gate_sigma: float):
    x, P = _predict(state, measurement.t, q)
    if not measurement.valid:
        return TrackState(x, P, measurement.t), np.zeros(3, bool), x, P
    nu = np.asarray(measurement.position, dtype=np.float64) - x[:, 0]
    S = P[:, 0, 0] + r
    ok = np.abs(nu) <= gate_sigma * np.sqrt(S)
    K = P[:, :, 0] / S[:, None]
    x_upd = x + K * nu[:, None]
    # Joseph form keeps P symmetric positive definite
    IKH = np.eye(2)[None] - K[:, :, None] * np.array([1.0, 0.0])[None, None, :]
    P_upd = IKH @ P @ np.swapaxes(IKH, 1, 2) + r * K[:, :, None] * K[:, None, :]
    P_upd = 0.5 * (P_upd + np.swapaxes(P_upd, 1, 2))
    new = TrackState(np.where(ok[:, None], x_upd, x), np.where(ok[:, None, None], P_upd, P), measurement.t)
    return new, ok, x, P


def kf_step(state: TrackState, measurement: TrackMeasurement, process_noise_q: float = 0.01,
            meas_noise_r: float = 1e-4, gate_sigma: float = 3.0) -> tuple[TrackState, bool]:
    """One predict/gate/update cycle.

    ``process_noise_q`` is the white-acceleration spectral density (m^2/s^3),
    ``meas_noise_r`` the measurement variance (m^2).  Returns the new state and
    whether every axis of the measurement passed the gate.
    """
    if not measurement.t > state.t:
        raise ValueError("measurement must be later than the state")
    _check_pd(state.P)
    new, ok, _, _ = _step(state, measurement, process_noise_q, meas_noise_r, gate_sigma)
    return new, bool(np.all(ok))


@dataclass(frozen=True)
class TrackResult:
    filtered: Trajectory
    smoothed: Trajectory | None
    accepted: np.ndarray          # (K,) every axis passed the gate
    axis_accepted: np.ndarray     # (K, 3)

    @property
    def trajectory(self) -> Trajectory:
        return self.smoothed if self.smoothed is not None else self.filtered


def run_tracker(t, positions, valid=None, tuning: TrackingTuning = TrackingTuning()) -> TrackResult:
    t = np.asarray(t, dtype=np.float64)
    z = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    valid = np.ones(t.size, bool) if valid is None else np.asarray(valid, bool)
    if t.size != z.shape[0] or t.size != valid.size:
        raise ValueError("measurement arrays differ in length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("measurements must be strictly time-sorted")
    good = np.flatnonzero(valid & np.all(np.isfinite(z), axis=1))
    if good.size < 2:
        raise NumericalError("need at least two valid measurements to start a track")
    q = tuning.accel_noise ** 2
    r = tuning.meas_sigma ** 2
    i0, i1 = good[0], good[1]
    dt0 = t[i1] - t[i0]
    x = np.column_stack([z[i1], (z[i1] - z[i0]) / dt0])
    P = np.tile(np.array([[r, r / dt0], [r / dt0, 2 * r / dt0 ** 2]]), (3, 1, 1))
    state = TrackState(x, P, t[i1])

    n = t.size
    xs = np.zeros((n, 3, 2))
    Ps = np.zeros((n, 3, 2, 2))
    xp = np.zeros((n, 3, 2))
    Pp = np.zeros((n, 3, 2, 2))
    axis_ok = np.zeros((n, 3), bool)
    axis_ok[[i0, i1]] = True
    xs[i1], Ps[i1] = x, P
    misses = np.zeros(3, int)
    for k in range(i1 + 1, n):
        meas = TrackMeasurement(t[k], z[k], bool(valid[k] and np.all(np.isfinite(z[k]))))
        state, axis_ok[k], xp[k], Pp[k] = _step(state, meas, q, r, tuning.gate_sigma)
        if meas.valid:
            misses = np.where(axis_ok[k], 0, misses + 1)
            lost = misses >= tuning.max_coast
            if np.any(lost):
                dt = t[k] - t[k - 1]
                x, P = state.x.copy(), state.P.copy()
                x[lost, 0] = z[k, lost]
                P[lost] = np.array([[r, 0.0], [0.0, 2 * r / dt ** 2]])
                state = TrackState(x, P, t[k])
                misses[lost] = 0
        xs[k], Ps[k] = state.x, state.P

    def back_extrapolate(xk, tk):
        for k in range(i1 - 1, -1, -1):
            xs_k = xk.copy()
            xs_k[:, 0] = xk[:, 0] - xk[:, 1] * (tk - t[k])
            yield k, xs_k

    filt = xs.copy()
    for k, v in back_extrapolate(xs[i1], t[i1]):
        filt[k] = v
    filtered = Trajectory(t, filt[:, :, 0], filt[:, :, 1])

    smoothed = None
    if tuning.smooth:
        sm = xs.copy()
        Psm = Ps.copy()
        for k in range(n - 2, i1 - 1, -1):
            F, _ = _transition(t[k + 1] - t[k], q)
            C = Ps[k] @ F.T @ np.linalg.inv(Pp[k + 1])
            sm[k] = xs[k] + np.einsum("aij,aj->ai", C, sm[k + 1] - xp[k + 1])
            Psm[k] = Ps[k] + C @ (Psm[k + 1] - Pp[k + 1]) @ np.swapaxes(C, 1, 2)
        for k, v in back_extrapolate(sm[i1], t[i1]):
            sm[k] = v
        smoothed = Trajectory(t, sm[:, :, 0], sm[:, :, 1])
    return TrackResult(filtered, smoothed, np.all(axis_ok, axis=1), axis_ok)


def filter_track(t, positions, valid=None, tuning: TrackingTuning = TrackingTuning()) -> Trajectory:
    """Gated Kalman track sampled at the measurement times (smoothed unless ``tuning.smooth`` is off)."""
    return run_tracker(t, positions, valid, tuning).trajectory


def resample_track(traj: Trajectory, timestamps) -> Trajectory:
    """Piecewise-linear positions at ``timestamps``; velocity is the slope of the enclosing segment."""
    ts = np.asarray(timestamps, dtype=np.float64).reshape(-1)
    if not traj.covers(ts):
        raise CoverageError("resample timestamps fall outside the trajectory span")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("timestamps must be strictly increasing")
    pos = traj.position_at(ts)
    if traj.t.size == 1:
        return Trajectory(ts, pos, np.zeros_like(pos))
    seg = np.clip(np.searchsorted(traj.t, ts, side="right") - 1, 0, traj.t.size - 2)
    vel = (traj.position[seg + 1] - traj.position[seg]) / (traj.t[seg + 1] - traj.t[seg])[:, None]
    return Trajectory(ts, pos, vel)


def simulate_measurements(truth: Trajectory, rate: float = 30.0, sigma: float = 0.01,
                          t0: float | None = None, t1: float | None = None,
                          outlier_fraction: float = 0.0, outlier_sigma: float = 10.0,
                          seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noisy position fixes of ``truth`` at ``rate`` Hz.

    A random ``outlier_fraction`` of samples is replaced by jumps of
    ``outlier_sigma * sigma`` with a random sign on every axis.  Returns
    ``(t, positions, is_outlier)``.
    """
    t0 = truth.t[0] if t0 is None else t0
    t1 = truth.t[-1] if t1 is None else t1
    n = int(np.floor((t1 - t0) * rate + 1e-9)) + 1
    t = t0 + np.arange(n) / rate
    rng = np.random.default_rng(seed)
    exact = truth.position_at(t)
    z = exact + sigma * rng.standard_normal((n, 3))
    out = np.zeros(n, bool)
    n_out = int(round(outlier_fraction * n))
    if n_out:
        # the first two fixes seed the track and stay clean
        idx = rng.choice(np.arange(2, n), size=n_out, replace=False)
        out[idx] = True
        z[idx] = exact[idx] + outlier_sigma * sigma * rng.choice([-1.0, 1.0], size=(n_out, 3))
    return t, z, out


def measurements_to_csv(t, positions, valid=None) -> str:
    lines = ["t,x,y,z,valid"]
    valid = np.ones(len(t), bool) if valid is None else valid
    for ti, p, v in zip(t, positions, valid):
        lines.append(",".join(repr(float(a)) for a in (ti, *p)) + f",{int(v)}")
    return "\n".join(lines) + "\n"


def trajectory_to_csv(traj: Trajectory) -> str:
    lines = ["t,x,y,z,vx,vy,vz"]
    for ti, p, v in zip(traj.t, traj.position, traj.velocity):
        lines.append(",".join(repr(float(a)) for a in (ti, *p, *v)))
    return "\n".join(lines) + "\n"


def read_track_csv(text: str):
    """Parse either layout.  Returns ``(t, positions, velocity_or_None, valid_or_None)``."""
    rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise DataFormatError("empty track file")
    header = [h.strip() for h in rows[0].split(",")]
    if header[:4] != ["t", "x", "y", "z"]:
        raise DataFormatError("track CSV must start with t,x,y,z")
    try:
        arr = np.array([[float(v) for v in r.split(",")] for r in rows[1:]]).reshape(-1, len(header))
    except ValueError as exc:
        raise DataFormatError(f"malformed track CSV: {exc}") from exc
    col = {h: k for k, h in enumerate(header)}
    vel = arr[:, [col["vx"], col["vy"], col["vz"]]] if "vx" in col else None
    valid = arr[:, col["valid"]].astype(bool) if "valid" in col else None
    return arr[:, 0], arr[:, 1:4], vel, valid
