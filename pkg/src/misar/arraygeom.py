"""Sparse MIMO array geometry: 8 Tx / 16 Rx on a vertical line or arc.

Coordinates are meters in the scene frame: origin at the scene center,
+x horizontal (direction of target motion), +y from the array toward the
scene, +z vertical.  The array sits at y = -arc_radius.

Physical antenna indices used throughout the package: Tx ``m`` is antenna
``m`` (0..7), Rx ``n`` is antenna ``8 + n`` (8..23).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import Config, format_config
from .errors import ConfigError, GeometryError

N_TX = 8
N_RX = 16
N_VIRTUAL = N_TX * N_RX
N_ANTENNAS = N_TX + N_RX

ARC_TOLERANCE = 1e-9


class LayoutMode(str, Enum):
    ARC = "ARC"
    PLANAR = "PLANAR"


class Role(str, Enum):
    TX = "TX"
    RX = "RX"


@dataclass(frozen=True)
class AntennaElement:
    index: int
    role: Role
    position: np.ndarray

    @property
    def antenna_id(self) -> int:
        return self.index if self.role is Role.TX else N_TX + self.index


@dataclass(frozen=True)
class VirtualChannel:
    tx_index: int
    rx_index: int
    sequence_slot: int
    effective_center: np.ndarray


@dataclass(frozen=True, eq=False)
class ArrayGeometry:
    """Element positions plus the parameters they were built from.

    ``tx_positions`` is (8, 3), ``rx_positions`` is (16, 3).  Instances are
    treated as immutable; the position arrays are made read-only.
    """

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    arc_radius: float = 1.5
    virtual_span: float = 0.5
    layout_mode: LayoutMode = LayoutMode.ARC
    _fingerprint: bytes = field(default=b"", repr=False, compare=False)

    def __post_init__(self):
        tx = np.array(self.tx_positions, dtype=np.float64)
        rx = np.array(self.rx_positions, dtype=np.float64)
        if tx.shape != (N_TX, 3) or rx.shape != (N_RX, 3):
            raise GeometryError(
                f"expected {N_TX} Tx and {N_RX} Rx 3-vectors, got {tx.shape} and {rx.shape}")
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx))):
            raise GeometryError("non-finite element position")
        tx.flags.writeable = False
        rx.flags.writeable = False
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)
        object.__setattr__(self, "layout_mode", LayoutMode(self.layout_mode))
        object.__setattr__(self, "_fingerprint", _fingerprint(self))

    @property
    def tx(self) -> list[AntennaElement]:
        return [AntennaElement(i, Role.TX, p) for i, p in enumerate(self.tx_positions)]

    @property
    def rx(self) -> list[AntennaElement]:
        return [AntennaElement(i, Role.RX, p) for i, p in enumerate(self.rx_positions)]

    @property
    def antenna_positions(self) -> np.ndarray:
        """All 24 positions in physical-antenna order (Tx first)."""
        return np.vstack([self.tx_positions, self.rx_positions])

    @property
    def fingerprint(self) -> bytes:
        """32-byte SHA-256 digest of the element positions and layout."""
        return self._fingerprint

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return self.fingerprint == other.fingerprint


def _fingerprint(geom: ArrayGeometry) -> bytes:
    h = hashlib.sha256()
    h.update(geom.layout_mode.value.encode())
    h.update(np.float64(geom.arc_radius).tobytes())
    h.update(np.float64(geom.virtual_span).tobytes())
    h.update(np.ascontiguousarray(geom.tx_positions, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(geom.rx_positions, dtype="<f8").tobytes())
    return h.digest()


def linear_coordinates(virtual_span: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Vertical coordinates of Tx and Rx along the unwrapped array line.

    With ``d = virtual_span / 128`` the Rx sit at ``(n - 7.5) * 2d`` and the Tx
    at ``(m - 3.5) * 32d``, so the Tx/Rx midpoints land on ``d * (16m + n - 63.5)``,
    every one of the 128 grid positions exactly once.
    """
    d = virtual_span / N_VIRTUAL
    rx = (np.arange(N_RX) - 7.5) * 2 * d
    tx = (np.arange(N_TX) - 3.5) * 32 * d
    return tx, rx


def _place(s: np.ndarray, radius: float, mode: LayoutMode) -> np.ndarray:
    pos = np.zeros((s.size, 3))
    if mode is LayoutMode.PLANAR:
        pos[:, 1] = -radius
        pos[:, 2] = s
    else:
        # arc length, not chord: theta = s / R
        theta = s / radius
        pos[:, 1] = -radius * np.cos(theta)
        pos[:, 2] = radius * np.sin(theta)
    return pos


def build_default_geometry(arc_radius: float = 1.5, virtual_span: float = 0.5,
                           layout_mode: LayoutMode | str = LayoutMode.ARC) -> ArrayGeometry:
    try:
        mode = layout_mode if isinstance(layout_mode, LayoutMode) else LayoutMode(str(layout_mode).upper())
    except ValueError as exc:
        raise ConfigError(f"unknown layout_mode {layout_mode!r}") from exc
    if not (np.isfinite(arc_radius) and arc_radius > 0):
        raise ConfigError(f"arc_radius must be positive, got {arc_radius}")
    if not (np.isfinite(virtual_span) and virtual_span > 0):
        raise ConfigError(f"virtual_span must be positive, got {virtual_span}")
    tx_s, rx_s = linear_coordinates(virtual_span)
    if mode is LayoutMode.ARC and np.max(np.abs(tx_s)) / arc_radius >= np.pi / 2:
        raise ConfigError("array span too large for the arc radius")
    return ArrayGeometry(_place(tx_s, arc_radius, mode), _place(rx_s, arc_radius, mode),
                         arc_radius=float(arc_radius), virtual_span=float(virtual_span),
                         layout_mode=mode)


def virtual_channels(geom: ArrayGeometry) -> list[VirtualChannel]:
    """The 128 Tx/Rx pairs in time-multiplexing order: slot = 16*tx + rx."""
    out = []
    for m, t in enumerate(geom.tx_positions):
        for n, r in enumerate(geom.rx_positions):
            out.append(VirtualChannel(m, n, N_RX * m + n, (t + r) / 2))
    return out


def channel_indices() -> tuple[np.ndarray, np.ndarray]:
    """(tx_index, rx_index) arrays indexed by sequence slot."""
    slots = np.arange(N_VIRTUAL)
    return slots // N_RX, slots % N_RX


def channel_positions(geom: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Tx and Rx positions per sequence slot, each (128, 3)."""
    ti, ri = channel_indices()
    return geom.tx_positions[ti], geom.rx_positions[ri]


def perturb_geometry(geom: ArrayGeometry, errors) -> ArrayGeometry:
    """Shift every element by its phase-center offset from ``errors.offsets`` (24, 3).

    Amplitude, phase and delay entries of the error model are not touched
    here; they are applied to the signals.
    """
    offsets = np.asarray(errors.offsets, dtype=np.float64)
    if offsets.shape != (N_ANTENNAS, 3):
        raise GeometryError(f"error model must have {N_ANTENNAS} offsets, got shape {offsets.shape}")
    if not np.any(offsets):
        return geom
    return ArrayGeometry(geom.tx_positions + offsets[:N_TX], geom.rx_positions + offsets[N_TX:],
                         arc_radius=geom.arc_radius, virtual_span=geom.virtual_span,
                         layout_mode=geom.layout_mode)


def validate_geometry(geom: ArrayGeometry, scene_center=(0.0, 0.0, 0.0)) -> None:
    """Raise :class:`GeometryError` if an ARC geometry violates the constant-radius constraint."""
    if geom.layout_mode is not LayoutMode.ARC:
        return
    r = np.linalg.norm(geom.antenna_positions - np.asarray(scene_center), axis=1)
    worst = np.max(np.abs(r - geom.arc_radius))
    if worst > ARC_TOLERANCE:
        raise GeometryError(f"element off the arc by {worst:.3e} m (tolerance {ARC_TOLERANCE:g} m)")


def geometry_to_config(geom: ArrayGeometry, prefix: str = "geometry") -> str:
    items = [(f"{prefix}.layout_mode", geom.layout_mode.value),
             (f"{prefix}.arc_radius", geom.arc_radius),
             (f"{prefix}.virtual_span", geom.virtual_span)]
    items += [(f"{prefix}.tx.{i}", p) for i, p in enumerate(geom.tx_positions)]
    items += [(f"{prefix}.rx.{i}", p) for i, p in enumerate(geom.rx_positions)]
    return format_config(items)


def geometry_from_config(cfg: Config, prefix: str = "geometry") -> ArrayGeometry:
    """Build from ``<prefix>.*`` keys; explicit ``tx.i``/``rx.i`` positions override the default layout."""
    sec = cfg.section(prefix)
    geom = build_default_geometry(sec.get_float("arc_radius", 1.5),
                                  sec.get_float("virtual_span", 0.5),
                                  sec.get_str("layout_mode", "ARC"))
    if not any(k.startswith(("tx.", "rx.")) for k in sec):
        return geom
    tx = np.array([sec.get_vector(f"tx.{i}", p) for i, p in enumerate(geom.tx_positions)])
    rx = np.array([sec.get_vector(f"rx.{i}", p) for i, p in enumerate(geom.rx_positions)])
    return ArrayGeometry(tx, rx, arc_radius=geom.arc_radius, virtual_span=geom.virtual_span,
                         layout_mode=geom.layout_mode)
