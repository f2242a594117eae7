"""Point-spread-function metrics and before/after calibration comparison.

Widths are full widths at half power (-3 dB), measured on cuts through the
peak voxel along the grid axes.  Each cut is oversampled 4x by linear
interpolation of power, so a single-voxel delta measures exactly one voxel.

The mainlobe is the union of two voxel sets grown from the peak:

* the 6-connected region at or above -3 dB, dilated by one voxel;
* the descent basin: voxels reachable from that -3 dB region through
  strictly decreasing magnitude.

The peak sidelobe level (PSL) is the largest magnitude outside that mask.
Every sidelobe maximum is a local maximum and cannot be reached by strict
descent, so the basin only removes the mainlobe skirt on finely sampled
images.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass

import numpy as np

from .arraygeom import N_VIRTUAL
from .errors import NumericalError
from .imaging import AXES, Image3D

OVERSAMPLE = 4
PSL_FLOOR_DB = -120.0
HALF_POWER = 0.5
_NEIGHBORS = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]


@dataclass(frozen=True)
class PsfReport:
    peak_position: np.ndarray     # m, target frame
    peak_index: tuple[int, int, int]
    peak_db: float                # 20*log10 of the interpolated peak magnitude
    widths: np.ndarray            # m, -3 dB, nan along singleton axes
    psl_db: float
    mainlobe_voxels: int
    mainlobe: str = "-3 dB region dilated by 1 voxel, union descent basin"

    def items(self, prefix: str = "psf") -> list[tuple[str, object]]:
        out = [(f"{prefix}.peak_x", float(self.peak_position[0])),
               (f"{prefix}.peak_y", float(self.peak_position[1])),
               (f"{prefix}.peak_z", float(self.peak_position[2])),
               (f"{prefix}.peak_db", float(self.peak_db))]
        out += [(f"{prefix}.width_{n}", float(self.widths[a])) for n, a in AXES.items()]
        out += [(f"{prefix}.psl_db", float(self.psl_db)),
                (f"{prefix}.mainlobe_voxels", int(self.mainlobe_voxels)),
                (f"{prefix}.mainlobe", self.mainlobe)]
        return out


def _region_slices(image: Image3D, search_region):
    if search_region is None:
        return tuple(slice(0, n) for n in image.grid.dims)
    lo, hi = (np.asarray(v, float) for v in search_region)
    g = image.grid
    i0 = np.clip(np.ceil((lo - g.origin) / g.spacing - 1e-9).astype(int), 0, None)
    i1 = np.minimum(np.floor((hi - g.origin) / g.spacing + 1e-9).astype(int) + 1, g.dims)
    if np.any(i1 <= i0):
        raise ValueError("search region does not intersect the grid")
    return tuple(slice(int(a), int(b)) for a, b in zip(i0, i1))


def _parabolic(a: float, b: float, c: float) -> tuple[float, float]:
    den = (a + c) - 2 * b
    if den >= 0:
        return 0.0, b
    d = 0.5 * (a - c) / den
    return d, b - 0.25 * (a - c) * d


def half_power_width(cut: np.ndarray, peak: int, spacing: float) -> float:
    """-3 dB width of a 1D magnitude cut around index ``peak``."""
    n = cut.size
    if n < 2:
        return float("nan")
    power = cut.astype(np.float64) ** 2
    u = np.arange((n - 1) * OVERSAMPLE + 1) / OVERSAMPLE
    pw = np.interp(u, np.arange(n), power) / power[peak]
    k = peak * OVERSAMPLE

    def edge(direction):
        j = k
        while 0 <= j + direction < pw.size and pw[j + direction] >= HALF_POWER:
            j += direction
        if not 0 <= j + direction < pw.size:
            return u[j]
        inside, outside = pw[j], pw[j + direction]
        frac = (inside - HALF_POWER) / (inside - outside)
        return u[j] + direction * frac / OVERSAMPLE

    return float((edge(1) - edge(-1)) * spacing)


def _grow(mask: np.ndarray, seeds, accept) -> None:
    shape = mask.shape
    todo = deque(seeds)
    for s in seeds:
        mask[s] = True
    while todo:
        cur = todo.popleft()
        for d in _NEIGHBORS:
            nb = (cur[0] + d[0], cur[1] + d[1], cur[2] + d[2])
            if all(0 <= nb[a] < shape[a] for a in range(3)) and not mask[nb] and accept(cur, nb):
                mask[nb] = True
                todo.append(nb)


def mainlobe_mask(mag: np.ndarray, peak: tuple[int, int, int]) -> np.ndarray:
    """Boolean mask of the mainlobe around ``peak`` (see module notes)."""
    shape = mag.shape
    thresh = mag[peak] * np.sqrt(HALF_POWER)
    above = np.zeros(shape, bool)
    _grow(above, [peak], lambda cur, nb: mag[nb] >= thresh)
    basin = np.zeros(shape, bool)
    _grow(basin, [tuple(int(i) for i in s) for s in np.argwhere(above)],
          lambda cur, nb: mag[nb] < mag[cur])
    dilated = above.copy()
    for a in range(3):
        if shape[a] > 1:
            lo = tuple(slice(None, -1) if k == a else slice(None) for k in range(3))
            hi = tuple(slice(1, None) if k == a else slice(None) for k in range(3))
            dilated[hi] |= above[lo]
            dilated[lo] |= above[hi]
    return dilated | basin


def psf_metrics(image: Image3D, search_region=None) -> PsfReport:
    """Peak, -3 dB widths and PSL of the point response in ``search_region``.

    ``search_region`` is ``(lo, hi)`` corner points in meters (target frame)
    or ``None`` for the whole grid.  Raises :class:`NumericalError` if the
    region is flat or its maximum is not unique.
    """
    region = _region_slices(image, search_region)
    mag = image.magnitude[region]
    peak_val = mag.max()
    if not np.isfinite(peak_val) or peak_val <= mag.min():
        raise NumericalError("flat image: no point response to measure")
    if np.count_nonzero(mag == peak_val) > 1:
        raise NumericalError("global maximum is not unique")
    peak = tuple(int(i) for i in np.unravel_index(np.argmax(mag), mag.shape))
    g = image.grid
    offset = np.array([s.start for s in region])

    frac = np.zeros(3)
    gains = []
    widths = np.full(3, np.nan)
    for a in range(3):
        cut = mag[tuple(slice(None) if k == a else peak[k] for k in range(3))]
        widths[a] = half_power_width(cut, peak[a], g.spacing[a])
        if 0 < peak[a] < cut.size - 1:
            frac[a], v = _parabolic(cut[peak[a] - 1], cut[peak[a]], cut[peak[a] + 1])
            gains.append(v - peak_val)
    position = g.origin + (offset + np.array(peak) + frac) * g.spacing
    peak_db = 20 * np.log10(peak_val + sum(gains))

    mask = mainlobe_mask(mag, peak)
    rest = mag[~mask]
    if rest.size and rest.max() > 0:
        psl = max(20 * np.log10(rest.max() / peak_val), PSL_FLOOR_DB)
    else:
        psl = PSL_FLOOR_DB
    index = tuple(int(i) for i in offset + np.array(peak))
    return PsfReport(position, index, float(peak_db), widths, float(psl), int(mask.sum()))


@dataclass(frozen=True)
class Comparison:
    before: PsfReport
    after: PsfReport

    @property
    def psl_improvement_db(self) -> float:
        return self.before.psl_db - self.after.psl_db

    @property
    def width_change(self) -> np.ndarray:
        return self.after.widths - self.before.widths

    @property
    def peak_displacement(self) -> float:
        return float(np.linalg.norm(self.after.peak_position - self.before.peak_position))

    def items(self) -> list[tuple[str, object]]:
        out = self.before.items("before") + self.after.items("after")
        out += [("compare.psl_improvement_db", self.psl_improvement_db)]
        out += [(f"compare.width_change_{n}", float(self.width_change[a])) for n, a in AXES.items()]
        out += [("compare.peak_displacement", self.peak_displacement)]
        return out


def compare_before_after(image_uncal: Image3D, image_cal: Image3D, search_region=None) -> Comparison:
    gu, gc = image_uncal.grid, image_cal.grid
    if gu.dims != gc.dims or not (np.array_equal(gu.origin, gc.origin) and np.array_equal(gu.spacing, gc.spacing)):
        raise ValueError("images are on different grids")
    return Comparison(psf_metrics(image_uncal, search_region), psf_metrics(image_cal, search_region))


def theoretical_widths(params, geom, synthetic_aperture: float, distance: float | None = None) -> dict:
    """Rectangular-aperture -3 dB widths: ``0.886 * lambda * R / (2 L)`` per
    cross-range axis and ``0.886 * c / (2 B)`` in range.  ``L`` along z is
    the extent of the virtual phase centers along the array."""
    R = geom.arc_radius if distance is None else distance
    # 128 centers at spacing d: the sampled extent is 127*d
    span_v = geom.virtual_span * (N_VIRTUAL - 1) / N_VIRTUAL
    out = {"bin_spacing": params.range_resolution,
           "range": 0.886 * params.range_resolution,
           "vertical": 0.886 * params.wavelength * R / (2 * span_v)}
    if synthetic_aperture > 0:
        out["horizontal"] = 0.886 * params.wavelength * R / (2 * synthetic_aperture)
    return out


def region_mean(image: Image3D, lo, hi) -> float:
    """Mean magnitude over the voxels inside the box ``[lo, hi]`` (meters)."""
    mag = image.magnitude[_region_slices(image, (lo, hi))]
    return float(mag.mean())


def report_text(items) -> str:
    lines = []
    for k, v in items:
        if isinstance(v, (float, np.floating)):
            v = f"{float(v):.6g}"
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def report_csv(items) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for k, v in items:
        w.writerow([k, repr(float(v)) if isinstance(v, (float, np.floating)) else v])
    return buf.getvalue()
