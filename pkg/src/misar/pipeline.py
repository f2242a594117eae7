"""End-to-end experiments: scan and calibrate, simulate a moving target,
track it, compensate, image and report.

Artifact directory layout written by :func:`run_experiment`::

    spec.txt           the experiment spec that produced the run
    scan.csv           link observables of the calibration scan
    calib.txt          calibration solution
    cube.bin           raw (uncompensated) data cube
    measurements.csv   simulated position fixes
    track.csv          tracker output
    image.bin          calibrated image
    image_uncal.bin    uncalibrated image (when ``compare`` is on)
    slices/            8-bit dB slices of image.bin plus slices.txt
    report.txt         key: value summary, byte-identical across reruns
    report.csv         the same summary as CSV
    timing.txt         wall-clock time per stage (not part of the report)

Downstream stages read their inputs back from these files, so rerunning a
stage on cached upstream artifacts gives the same result.
"""

from __future__ import annotations

import hashlib
import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, calib, fileio, imaging, tracking
from .arraygeom import ArrayGeometry, build_default_geometry
from .config import Config, format_config, parse_config
from .errors import ConfigError, MisarError, StageError
from .simulator import ChannelErrorModel, Scene, Trajectory, add_noise, pulse_times, simulate_collection
from .waveform import ChirpParams

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- humanoid

# (name, center, semi-axes) in meters for a 1.7 m figure, feet at z = 0
_BODY_PARTS = (
    ("torso", (0.0, 0.0, 1.25), (0.17, 0.11, 0.30)),
    ("pelvis", (0.0, 0.0, 0.92), (0.16, 0.10, 0.12)),
    ("neck", (0.0, 0.0, 1.50), (0.05, 0.05, 0.06)),
    ("head", (0.0, 0.0, 1.62), (0.08, 0.10, 0.11)),
    ("arm_l", (-0.23, 0.0, 1.22), (0.05, 0.05, 0.30)),
    ("arm_r", (0.23, 0.0, 1.22), (0.05, 0.05, 0.30)),
    ("leg_l", (-0.09, 0.0, 0.45), (0.07, 0.07, 0.43)),
    ("leg_r", (0.09, 0.0, 0.45), (0.07, 0.07, 0.43)),
)
_REFERENCE_HEIGHT = 1.7


@dataclass(frozen=True)
class HumanoidParams:
    """Body and concealed-plate description.

    The scene frame puts the origin on the front surface of the torso at
    its mid height, +y into the body.  ``plate_size`` is (width along x,
    height along z); a zero entry means no plate.  ``spacing=None`` samples
    at half the center wavelength.
    """

    height: float = 1.7
    spacing: float | None = None
    body_reflectivity: float = 1.0
    plate_size: tuple[float, float] = (0.10, 0.15)
    plate_spacing: float = 0.006
    plate_center: tuple[float, float] = (0.0, 0.0)
    plate_standoff: float = 0.01
    plate_reflectivity: float = 3.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class HumanoidScene:
    body: Scene
    normals: np.ndarray
    plate: Scene
    plate_box: tuple[np.ndarray, np.ndarray] | None
    torso_center: np.ndarray
    torso_axes: np.ndarray
    spacing: float

    @property
    def scene(self) -> Scene:
        return self.body + self.plate

    def facing(self, direction=(0.0, -1.0, 0.0)) -> Scene:
        """Body points whose outward normal points along ``direction``, plus the plate."""
        keep = self.normals @ np.asarray(direction, float) > 0
        body = Scene(self.body.positions[keep], self.body.reflectivity[keep])
        return body + self.plate

    def torso_surface_y(self, x, z) -> np.ndarray:
        """y of the front torso surface at (x, z); nan where the torso is absent."""
        return _front_y(self.torso_center, self.torso_axes, x, z)


def _front_y(c, a, x, z):
    u = 1 - ((np.asarray(x) - c[0]) / a[0]) ** 2 - ((np.asarray(z) - c[2]) / a[2]) ** 2
    return np.where(u >= 0, c[1] - a[1] * np.sqrt(np.maximum(u, 0)), np.nan)


def _ring_sample(center, axes, spacing):
    """Points on an ellipsoid surface with neighbor spacing <= ``spacing``, plus outward normals."""
    a, b, c = axes
    m = max(a, b)
    # rings equally spaced in arc length along the widest meridian
    th = np.linspace(0, np.pi, 2049)
    speed = np.hypot(m * np.cos(th), c * np.sin(th))
    arc = np.concatenate([[0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(th))])
    n_ring = max(int(np.ceil(arc[-1] / spacing)), 1)
    theta = np.interp((np.arange(n_ring) + 0.5) * arc[-1] / n_ring, arc, th)
    pts = []
    for i, t in enumerate(theta):
        circ = 2 * np.pi * m * np.sin(t)
        n_phi = max(int(np.ceil(circ / spacing)), 1)
        phi = (np.arange(n_phi) + 0.5 * (i % 2)) * 2 * np.pi / n_phi
        pts.append(np.column_stack([a * np.sin(t) * np.cos(phi), b * np.sin(t) * np.sin(phi),
                                    np.full(n_phi, c * np.cos(t))]))
    local = np.vstack(pts)
    normals = local / np.array([a, b, c]) ** 2
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return local + center, normals


def make_humanoid(params: HumanoidParams = HumanoidParams(), wavelength: float | None = None) -> HumanoidScene:
    """Surface point cloud of a humanoid with an optional plate on the chest.

    Each body part is an ellipsoid shell sampled in rings so no point is
    more than ``spacing`` from its neighbors; points buried inside another
    part are dropped.  Body points have magnitude ``body_reflectivity`` and
    independent uniform random phase (diffuse skin).  Plate points sit on a
    regular ``plate_spacing`` grid ``plate_standoff`` in front of the torso
    surface with common phase, and body points hidden behind the plate are
    removed.
    """
    lam = ChirpParams().wavelength if wavelength is None else wavelength
    spacing = lam / 2 if params.spacing is None else float(params.spacing)
    if not (params.height > 0 and spacing > 0):
        raise ValueError("height and spacing must be positive")
    if spacing > lam / 2 * (1 + 1e-12):
        warnings.warn(f"surface spacing {spacing:.4g} m exceeds lambda/2 = {lam / 2:.4g} m; "
                      "surface is undersampled", stacklevel=2)
    k = params.height / _REFERENCE_HEIGHT
    parts = [(np.array(c) * k, np.array(a) * k) for _, c, a in _BODY_PARTS]
    torso_c, torso_a = parts[0]
    shift = np.array([0.0, -torso_a[1], torso_c[2]]) + np.array([torso_c[0], torso_c[1], 0.0])

    pos, nrm = [], []
    for i, (c, a) in enumerate(parts):
        p, n = _ring_sample(c, a, spacing)
        inside = np.zeros(len(p), bool)
        for j, (c2, a2) in enumerate(parts):
            if j != i:
                inside |= np.sum(((p - c2) / a2) ** 2, axis=1) < 1
        pos.append(p[~inside])
        nrm.append(n[~inside])
    pos = np.vstack(pos) - shift
    nrm = np.vstack(nrm)
    rng = np.random.default_rng(params.seed)
    refl = params.body_reflectivity * np.exp(2j * np.pi * rng.random(len(pos)))

    torso_center = torso_c - shift
    w, h = params.plate_size
    plate = Scene.empty()
    box = None
    if w > 0 and h > 0:
        cx, cz = params.plate_center
        nx = int(np.floor(w / params.plate_spacing + 1e-9)) + 1
        nz = int(np.floor(h / params.plate_spacing + 1e-9)) + 1
        xs = cx + (np.arange(nx) - (nx - 1) / 2) * params.plate_spacing
        zs = cz + (np.arange(nz) - (nz - 1) / 2) * params.plate_spacing
        xx, zz = np.meshgrid(xs, zs, indexing="ij")
        surf = _front_y(torso_center, torso_a, xx, zz)
        if np.any(np.isnan(surf)):
            raise ValueError("plate extends beyond the torso")
        y_plate = float(np.min(surf)) - params.plate_standoff
        pp = np.column_stack([xx.ravel(), np.full(xx.size, y_plate), zz.ravel()])
        plate = Scene(pp, np.full(len(pp), params.plate_reflectivity * params.body_reflectivity, complex))
        lo = np.array([cx - w / 2, y_plate, cz - h / 2])
        hi = np.array([cx + w / 2, y_plate, cz + h / 2])
        box = (lo, hi)
        hidden = ((pos[:, 0] >= lo[0]) & (pos[:, 0] <= hi[0]) & (pos[:, 2] >= lo[2])
                  & (pos[:, 2] <= hi[2]) & (pos[:, 1] > y_plate))
        pos, nrm, refl = pos[~hidden], nrm[~hidden], refl[~hidden]
    return HumanoidScene(Scene(pos, refl), nrm, plate, box, torso_center, torso_a, spacing)


def surface_region_mask(grid: imaging.VoxelGrid, x_range, z_range, surface_y, half_thickness=0.01):
    """Voxels with (x, z) in the rectangle and y within ``half_thickness`` of ``surface_y(x, z)``."""
    x = grid.axis("x")[:, None, None]
    y = grid.axis("y")[None, :, None]
    z = grid.axis("z")[None, None, :]
    sy = surface_y(x, z)
    inside = (x >= x_range[0]) & (x <= x_range[1]) & (z >= z_range[0]) & (z <= z_range[1])
    with np.errstate(invalid="ignore"):
        near = np.abs(y - sy) <= half_thickness
    return inside & near


def plate_contrast(image: imaging.Image3D, hum: HumanoidScene, half_thickness: float = 0.01,
                   gap: float = 0.02) -> dict:
    """Mean |image| over the plate neighborhood against two equal-size torso
    regions beside it (left and right in x, separated by ``gap``)."""
    if hum.plate_box is None:
        raise ValueError("scene has no plate")
    lo, hi = hum.plate_box
    w = hi[0] - lo[0]
    y_plate = lo[1]
    g = image.grid
    mag = image.magnitude
    xr, zr = (lo[0], hi[0]), (lo[2], hi[2])
    plate_mask = surface_region_mask(g, xr, zr, lambda x, z: np.full(np.broadcast(x, z).shape, y_plate),
                                     half_thickness)
    out = {"plate_voxels": int(plate_mask.sum()), "plate_mean": float(mag[plate_mask].mean())}
    means = []
    for side, sign in (("left", -1), ("right", 1)):
        shift = sign * (w + gap)
        m = surface_region_mask(g, (xr[0] + shift, xr[1] + shift), zr, hum.torso_surface_y, half_thickness)
        if not m.any():
            raise ValueError(f"{side} control region falls outside the image grid")
        out[f"control_{side}_voxels"] = int(m.sum())
        out[f"control_{side}_mean"] = float(mag[m].mean())
        means.append(out[f"control_{side}_mean"])
    out["control_mean"] = float(np.mean(means))
    out["contrast_db"] = float(20 * np.log10(out["plate_mean"] / out["control_mean"]))
    return out


# ---------------------------------------------------------------- spec

@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one run.  ``scene`` is ``point`` or ``humanoid``."""

    name: str = "point"
    scene: str = "point"
    point_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    humanoid: HumanoidParams = HumanoidParams()
    arc_radius: float = 1.5
    virtual_span: float = 0.5
    layout_mode: str = "ARC"
    chirp: ChirpParams = ChirpParams()
    n_bursts: int = 64
    burst_interval: float = 20e-3
    speed: float = 0.55
    sigma_amplitude: float = 0.1
    sigma_phase_deg: float = 30.0
    sigma_delay: float = 20e-12
    sigma_offset: float = 2e-3
    calibrate: bool = True
    scan: calib.ScanGrid = calib.ScanGrid.desk()
    scan_snr_db: float = np.inf
    snr_db: float = np.inf
    grid_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    grid_spacing: float = 0.005
    grid_dims: tuple[int, int, int] = (64, 64, 32)
    track_rate: float = 30.0
    track_sigma: float = 0.01
    track_outliers: float = 0.02
    track_warmup: float = 1.0
    tracking: tracking.TrackingTuning = tracking.TrackingTuning()
    trajectory_source: str = "tracked"
    crop_margin: float | None = None
    facing_only: bool = False
    compare: bool = True
    upsample: int = 8
    window: str = "NONE"
    deterministic: bool = True
    workers: int = 1
    slice_axis: str = "y"
    seed: int = 0

    def __post_init__(self):
        if self.scene not in ("point", "humanoid"):
            raise ValueError(f"unknown scene {self.scene!r}")
        if self.trajectory_source not in ("truth", "tracked"):
            raise ValueError("trajectory_source must be 'truth' or 'tracked'")
        if self.n_bursts < 1 or self.workers < 1:
            raise ValueError("n_bursts and workers must be >= 1")

    def geometry(self) -> ArrayGeometry:
        return build_default_geometry(self.arc_radius, self.virtual_span, self.layout_mode)

    def grid(self) -> imaging.VoxelGrid:
        return imaging.VoxelGrid.centered(self.grid_center, self.grid_spacing, self.grid_dims)

    def options(self) -> imaging.ImagingOptions:
        return imaging.ImagingOptions(self.upsample, self.window, self.deterministic)

    def truth_errors(self) -> ChannelErrorModel:
        rng = np.random.default_rng([self.seed, 1])
        return ChannelErrorModel.random(rng, self.sigma_amplitude, np.deg2rad(self.sigma_phase_deg),
                                        self.sigma_delay, self.sigma_offset)

    def aperture_times(self) -> tuple[float, float]:
        t = pulse_times(self.n_bursts, self.burst_interval, self.chirp)
        return float(t.min()), float(t.max())

    def truth_trajectory(self) -> Trajectory:
        """Straight pass along +x, crossing x = 0 at mid aperture."""
        t0, t1 = self.aperture_times()
        tm = 0.5 * (t0 + t1)
        ts = t0 - self.track_warmup
        start = np.array([self.speed * (ts - tm), 0.0, 0.0])
        return Trajectory.linear(start, (self.speed, 0.0, 0.0), ts, t1 + 0.1)

    def synthetic_aperture(self) -> float:
        t0, t1 = self.aperture_times()
        return self.speed * (t1 - t0)

    # -- text form

    def to_text(self) -> str:
        h = self.humanoid
        items = [("experiment.name", self.name), ("experiment.scene", self.scene),
                 ("experiment.seed", self.seed),
                 ("scene.point_position", self.point_position),
                 ("humanoid.height", h.height), ("humanoid.spacing", h.spacing if h.spacing else 0.0),
                 ("humanoid.body_reflectivity", h.body_reflectivity),
                 ("humanoid.plate_size", h.plate_size), ("humanoid.plate_spacing", h.plate_spacing),
                 ("humanoid.plate_center", h.plate_center), ("humanoid.plate_standoff", h.plate_standoff),
                 ("humanoid.plate_reflectivity", h.plate_reflectivity), ("humanoid.seed", h.seed),
                 ("geometry.arc_radius", self.arc_radius), ("geometry.virtual_span", self.virtual_span),
                 ("geometry.layout_mode", self.layout_mode)]
        items += self.chirp.to_items()
        items += [("motion.n_bursts", self.n_bursts), ("motion.burst_interval", self.burst_interval),
                  ("motion.speed", self.speed),
                  ("errors.sigma_amplitude", self.sigma_amplitude),
                  ("errors.sigma_phase_deg", self.sigma_phase_deg),
                  ("errors.sigma_delay", self.sigma_delay), ("errors.sigma_offset", self.sigma_offset),
                  ("scan.enabled", int(self.calibrate)), ("scan.x_extent", self.scan.x_extent),
                  ("scan.z_extent", self.scan.z_extent), ("scan.step", self.scan.step),
                  ("scan.plane_offset", self.scan.plane_offset), ("scan.snr_db", self.scan_snr_db),
                  ("noise.snr_db", self.snr_db),
                  ("grid.center", self.grid_center), ("grid.spacing", self.grid_spacing),
                  ("grid.dims", " ".join(str(int(d)) for d in self.grid_dims)),
                  ("tracking.rate", self.track_rate), ("tracking.sigma", self.track_sigma),
                  ("tracking.outlier_fraction", self.track_outliers),
                  ("tracking.warmup", self.track_warmup),
                  ("tracking.accel_noise", self.tracking.accel_noise),
                  ("tracking.meas_sigma", self.tracking.meas_sigma),
                  ("tracking.gate_sigma", self.tracking.gate_sigma),
                  ("tracking.smooth", int(self.tracking.smooth)),
                  ("tracking.source", self.trajectory_source),
                  ("scene.crop_margin", -1.0 if self.crop_margin is None else self.crop_margin),
                  ("scene.facing_only", int(self.facing_only)),
                  ("imaging.compare", int(self.compare)), ("imaging.upsample", self.upsample),
                  ("imaging.window", self.window), ("imaging.deterministic", int(self.deterministic)),
                  ("imaging.workers", self.workers), ("imaging.slice_axis", self.slice_axis)]
        return format_config(items)

    @classmethod
    def from_config(cls, cfg: Config, base: "ExperimentSpec | None" = None) -> "ExperimentSpec":
        """Override ``base`` (default: :func:`point_target_spec`) with the keys present in ``cfg``."""
        b = base or point_target_spec()
        g = lambda sec, key, dflt, kind="float": getattr(cfg.section(sec), f"get_{kind}")(key, dflt)
        hb = b.humanoid
        spacing = g("humanoid", "spacing", hb.spacing or 0.0)
        hum = HumanoidParams(g("humanoid", "height", hb.height), spacing if spacing > 0 else None,
                             g("humanoid", "body_reflectivity", hb.body_reflectivity),
                             tuple(g("humanoid", "plate_size", np.array(hb.plate_size), "vector")),
                             g("humanoid", "plate_spacing", hb.plate_spacing),
                             tuple(g("humanoid", "plate_center", np.array(hb.plate_center), "vector")),
                             g("humanoid", "plate_standoff", hb.plate_standoff),
                             g("humanoid", "plate_reflectivity", hb.plate_reflectivity),
                             g("humanoid", "seed", hb.seed, "int"))
        crop = g("scene", "crop_margin", -1.0 if b.crop_margin is None else b.crop_margin)
        dims = cfg.get("grid.dims")
        try:
            dims = tuple(int(x) for x in dims.split()) if dims else b.grid_dims
        except ValueError as exc:
            raise ConfigError(f"bad value for 'grid.dims': {dims!r}") from exc
        return cls(
            name=g("experiment", "name", b.name, "str"), scene=g("experiment", "scene", b.scene, "str"),
            point_position=tuple(g("scene", "point_position", np.array(b.point_position), "vector")),
            humanoid=hum,
            arc_radius=g("geometry", "arc_radius", b.arc_radius),
            virtual_span=g("geometry", "virtual_span", b.virtual_span),
            layout_mode=g("geometry", "layout_mode", b.layout_mode, "str"),
            chirp=_chirp_from(cfg, b.chirp),
            n_bursts=g("motion", "n_bursts", b.n_bursts, "int"),
            burst_interval=g("motion", "burst_interval", b.burst_interval),
            speed=g("motion", "speed", b.speed),
            sigma_amplitude=g("errors", "sigma_amplitude", b.sigma_amplitude),
            sigma_phase_deg=g("errors", "sigma_phase_deg", b.sigma_phase_deg),
            sigma_delay=g("errors", "sigma_delay", b.sigma_delay),
            sigma_offset=g("errors", "sigma_offset", b.sigma_offset),
            calibrate=g("scan", "enabled", b.calibrate, "bool"),
            scan=calib.ScanGrid(g("scan", "x_extent", b.scan.x_extent), g("scan", "z_extent", b.scan.z_extent),
                                g("scan", "step", b.scan.step), g("scan", "plane_offset", b.scan.plane_offset)),
            scan_snr_db=g("scan", "snr_db", b.scan_snr_db),
            snr_db=g("noise", "snr_db", b.snr_db),
            grid_center=tuple(g("grid", "center", np.array(b.grid_center), "vector")),
            grid_spacing=g("grid", "spacing", b.grid_spacing), grid_dims=dims,
            track_rate=g("tracking", "rate", b.track_rate), track_sigma=g("tracking", "sigma", b.track_sigma),
            track_outliers=g("tracking", "outlier_fraction", b.track_outliers),
            track_warmup=g("tracking", "warmup", b.track_warmup),
            tracking=tracking.TrackingTuning(g("tracking", "accel_noise", b.tracking.accel_noise),
                                             g("tracking", "meas_sigma", b.tracking.meas_sigma),
                                             g("tracking", "gate_sigma", b.tracking.gate_sigma),
                                             g("tracking", "smooth", b.tracking.smooth, "bool")),
            trajectory_source=g("tracking", "source", b.trajectory_source, "str"),
            crop_margin=None if crop < 0 else crop,
            facing_only=g("scene", "facing_only", b.facing_only, "bool"),
            compare=g("imaging", "compare", b.compare, "bool"),
            upsample=g("imaging", "upsample", b.upsample, "int"),
            window=g("imaging", "window", b.window, "str").upper(),
            deterministic=g("imaging", "deterministic", b.deterministic, "bool"),
            workers=g("imaging", "workers", b.workers, "int"),
            slice_axis=g("imaging", "slice_axis", b.slice_axis, "str"),
            seed=g("experiment", "seed", b.seed, "int"))

    @classmethod
    def from_text(cls, text: str, base: "ExperimentSpec | None" = None) -> "ExperimentSpec":
        return cls.from_config(parse_config(text), base)


def _chirp_from(cfg: Config, base: ChirpParams) -> ChirpParams:
    sec = cfg.section("chirp")
    return ChirpParams(sec.get_float("f_start", base.f_start), sec.get_float("f_stop", base.f_stop),
                       sec.get_float("pulse_width", base.pulse_width), sec.get_float("prt", base.prt),
                       sec.get_int("n_samples", base.n_samples))


def point_target_spec(**changes) -> ExperimentSpec:
    """Point target with injected channel errors, imaged before and after
    calibration on the desk grid along the known (stage) trajectory."""
    spec = ExperimentSpec(name="point", scene="point", trajectory_source="truth", compare=True)
    return replace(spec, **changes)


def humanoid_spec(**changes) -> ExperimentSpec:
    """Humanoid with a 10 x 15 cm plate, calibrated, imaged along the tracked
    trajectory.  The scene is reduced to array-facing points near the grid
    to keep the run short."""
    spec = ExperimentSpec(name="humanoid", scene="humanoid", grid_center=(0.0, 0.04, 0.0),
                          grid_dims=(64, 32, 64), trajectory_source="tracked", compare=False,
                          crop_margin=0.1, facing_only=True, snr_db=10.0)
    return replace(spec, **changes)


# ---------------------------------------------------------------- run

@dataclass
class ExperimentResult:
    out_dir: Path
    report: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    image: imaging.Image3D | None = None
    image_uncal: imaging.Image3D | None = None
    solution: calib.CalibrationSolution | None = None

    def value(self, key: str):
        return dict(self.report)[key]


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_scene(spec: ExperimentSpec):
    """Scene to simulate plus the humanoid description (``None`` for a point target)."""
    if spec.scene == "point":
        return Scene.point(spec.point_position), None
    hum = make_humanoid(spec.humanoid, spec.chirp.wavelength)
    scene = hum.facing() if spec.facing_only else hum.scene
    if spec.crop_margin is not None:
        lo, hi = spec.grid().bounds()
        scene = scene.crop(lo - spec.crop_margin, hi + spec.crop_margin)
    return scene, hum


def run_experiment(spec: ExperimentSpec, out_dir) -> ExperimentResult:
    """Run every stage and write the artifact directory (see module notes).

    Deterministic for a given spec: every random draw is seeded from
    ``spec.seed`` and imaging uses the fixed tile order.  A failing stage
    raises :class:`~misar.errors.StageError` naming the stage.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = ExperimentResult(out)
    rep = res.report
    geom = spec.geometry()
    params = spec.chirp
    truth_err = spec.truth_errors()

    @contextmanager
    def stage(name):
        t = time.perf_counter()
        log.info("stage %s", name)
        try:
            yield
        except StageError:
            raise
        except (MisarError, ValueError, RuntimeError, OSError) as exc:
            raise StageError(name, exc) from exc
        finally:
            res.timing[name] = time.perf_counter() - t

    (out / "spec.txt").write_text(spec.to_text())
    rep += [("experiment.name", spec.name), ("experiment.scene", spec.scene),
            ("experiment.seed", spec.seed), ("hash.spec", _sha(out / "spec.txt"))]

    solution = None
    if spec.calibrate:
        with stage("scan"):
            pulses = calib.simulate_link_pulses(geom, truth_err, spec.scan, params, snr_db=spec.scan_snr_db,
                                                seed=spec.seed)
            obs = calib.extract_observables(*pulses, params=params, upsample=spec.upsample)
            (out / "scan.csv").write_text(obs.to_csv())
        with stage("calibrate"):
            obs = calib.ObservationSet.from_csv((out / "scan.csv").read_text())
            solution = calib.estimate(obs, geom, params, delay_in_phase=True)
            (out / "calib.txt").write_text(calib.solution_to_text(solution))
            solution = calib.solution_from_text((out / "calib.txt").read_text())
            e = solution.errors
            rep += [("hash.calib", _sha(out / "calib.txt")),
                    ("calib.converged", int(solution.ok)),
                    ("calib.max_delay_error_s", float(np.max(np.abs(e.delay - truth_err.delay)))),
                    ("calib.max_offset_error_m",
                     float(np.max(np.linalg.norm(e.offsets - truth_err.offsets, axis=1)))),
                    ("calib.max_phase_error_deg",
                     float(np.rad2deg(np.max(np.abs(calib.wrap(e.phase - truth_err.phase)))))),
                    ("calib.max_amplitude_error", float(np.max(np.abs(e.amplitude / truth_err.amplitude - 1))))]
    res.solution = solution

    truth = spec.truth_trajectory()
    with stage("simulate"):
        scene, hum = build_scene(spec)
        cube = simulate_collection(scene, truth, geom, truth_err, params, spec.n_bursts, spec.burst_interval)
        cube = add_noise(cube, spec.snr_db, seed=spec.seed)
        fileio.write_cube(out / "cube.bin", cube)
        rep += [("simulate.scatterers", len(scene)), ("hash.cube", _sha(out / "cube.bin"))]

    with stage("track"):
        t_meas, z, is_out = tracking.simulate_measurements(
            truth, spec.track_rate, spec.track_sigma, truth.t[0], truth.t[-1], spec.track_outliers,
            seed=spec.seed)
        (out / "measurements.csv").write_text(tracking.measurements_to_csv(t_meas, z))
        tr = tracking.run_tracker(t_meas, z, tuning=spec.tracking)
        (out / "track.csv").write_text(tracking.trajectory_to_csv(tr.trajectory))
        t_read, p_read, v_read, _ = tracking.read_track_csv((out / "track.csv").read_text())
        tracked = Trajectory(t_read, p_read, v_read)
        t0, t1 = spec.aperture_times()
        win = (t_meas >= t0) & (t_meas <= t1)
        err = tracked.position[win] - truth.position_at(t_meas[win])
        rep += [("hash.track", _sha(out / "track.csv")),
                ("track.rmse_m", float(np.sqrt(np.mean(np.sum(err ** 2, axis=1) / 3)))),
                ("track.outliers_injected", int(is_out.sum())),
                ("track.outliers_rejected", int(np.sum(is_out & ~tr.accepted))),
                ("track.inliers_rejected", int(np.sum(~is_out & ~tr.accepted))),
                ("track.source", spec.trajectory_source)]
    traj = truth if spec.trajectory_source == "truth" else tracked

    with stage("image"):
        cube = fileio.read_cube(out / "cube.bin")
        grid = spec.grid()
        opts = spec.options()
        data = cube if solution is None else calib.compensate(cube, solution)
        res.image = imaging.backproject_parallel(data, geom, traj, grid, opts, spec.workers, solution)
        fileio.write_image(out / "image.bin", res.image)
        rep += [("hash.image", _sha(out / "image.bin"))]
        if spec.compare and solution is not None:
            res.image_uncal = imaging.backproject_parallel(cube, geom, traj, grid, opts, spec.workers)
            fileio.write_image(out / "image_uncal.bin", res.image_uncal)
            rep += [("hash.image_uncal", _sha(out / "image_uncal.bin"))]
        imaging.export_slices(res.image, spec.slice_axis, out_dir=out / "slices")

    with stage("metrics"):
        image = fileio.read_image(out / "image.bin")
        if spec.scene == "point":
            if res.image_uncal is not None:
                cmp = analysis.compare_before_after(fileio.read_image(out / "image_uncal.bin"), image)
                rep += cmp.items()
            else:
                rep += analysis.psf_metrics(image).items()
            theory = analysis.theoretical_widths(params, geom, spec.synthetic_aperture())
            rep += [(f"theory.{k}", v) for k, v in theory.items()]
        else:
            rep += [("humanoid.body_points", len(hum.body)), ("humanoid.plate_points", len(hum.plate))]
            if hum.plate_box is not None:
                rep += [(f"plate.{k}", v) for k, v in plate_contrast(image, hum).items()]
        (out / "report.txt").write_text(analysis.report_text(rep))
        (out / "report.csv").write_text(analysis.report_csv(rep))

    (out / "timing.txt").write_text("".join(f"{k}: {v:.3f} s\n" for k, v in res.timing.items()))
    return res
