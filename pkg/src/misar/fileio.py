"""Binary cube and image files.

Cube file: a fixed 128-byte little-endian header followed by interleaved
float32 (re, im) samples, sample fastest, then channel, then burst.

====== ======= ==========================================
offset type    field
====== ======= ==========================================
0      4s      magic ``MISR``
4      u8      version (1)
5      3x      reserved
8      u32 x3  n_bursts, n_channels, n_samples
20     f64 x5  f_start, f_stop, pulse_width, prt, burst_interval
60     u8      flags: bit0 spreading loss, bit1 noisy
61     3x      reserved
64     u64     seed
72     32s     geometry fingerprint
104    24x     zero padding
====== ======= ==========================================

Image file: an ASCII header of ``key: value`` lines starting with
``MISAR-IMAGE 1`` and ending with ``end_header``, then float32 (re, im)
pairs with x fastest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .imaging import Image3D, VoxelGrid
from .simulator import RawDataCube
from .waveform import ChirpParams

CUBE_MAGIC = b"MISR"
CUBE_VERSION = 1
CUBE_HEADER_SIZE = 128
_CUBE_STRUCT = struct.Struct("<4sB3x3I5dB3xQ32s")
IMAGE_MAGIC = "MISAR-IMAGE 1"

FLAG_SPREADING = 0x01
FLAG_NOISY = 0x02


def cube_to_bytes(cube: RawDataCube) -> bytes:
    p = cube.params
    flags = (FLAG_SPREADING if cube.spreading_loss else 0) | (FLAG_NOISY if cube.noisy else 0)
    head = _CUBE_STRUCT.pack(CUBE_MAGIC, CUBE_VERSION, cube.n_bursts, cube.n_channels, p.n_samples,
                             p.f_start, p.f_stop, p.pulse_width, p.prt, cube.burst_interval,
                             flags, int(cube.seed) & 0xFFFFFFFFFFFFFFFF, cube.fingerprint)
    head = head.ljust(CUBE_HEADER_SIZE, b"\0")
    payload = np.ascontiguousarray(cube.data, dtype="<c8").tobytes()
    return head + payload


def cube_from_bytes(buf: bytes) -> RawDataCube:
    if len(buf) < CUBE_HEADER_SIZE:
        raise DataFormatError(f"cube file too short for header ({len(buf)} bytes)")
    (magic, version, nb, nc, ns, f0, f1, pw, prt, bi, flags, seed,
     fp) = _CUBE_STRUCT.unpack_from(buf)
    if magic != CUBE_MAGIC:
        raise DataFormatError(f"bad cube magic {magic!r}")
    if version != CUBE_VERSION:
        raise DataFormatError(f"unsupported cube version {version} (this reader handles {CUBE_VERSION})")
    need = nb * nc * ns * 8
    have = len(buf) - CUBE_HEADER_SIZE
    if have != need:
        raise DataFormatError(f"cube payload is {have} bytes, header declares {need}")
    try:
        params = ChirpParams(f0, f1, pw, prt, ns)
    except ValueError as exc:
        raise DataFormatError(f"invalid chirp parameters in cube header: {exc}") from exc
    data = np.frombuffer(buf, dtype="<c8", offset=CUBE_HEADER_SIZE).reshape(nb, nc, ns)
    return RawDataCube(data, params, bi, fp, bool(flags & FLAG_SPREADING), bool(flags & FLAG_NOISY),
                       int(seed))


def write_cube(path, cube: RawDataCube) -> None:
    Path(path).write_bytes(cube_to_bytes(cube))


def read_cube(path) -> RawDataCube:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read cube file: {exc}") from exc
    return cube_from_bytes(buf)


def _fmt_vec(v) -> str:
    return " ".join(repr(float(x)) for x in v)


def image_to_bytes(image: Image3D) -> bytes:
    g = image.grid
    lines = [IMAGE_MAGIC,
             f"dims: {g.dims[0]} {g.dims[1]} {g.dims[2]}",
             f"origin: {_fmt_vec(g.origin)}",
             f"spacing: {_fmt_vec(g.spacing)}"]
    for k in sorted(image.metadata):
        v = str(image.metadata[k])
        if "\n" in v or ":" in k:
            raise ValueError(f"metadata entry {k!r} cannot be stored in the image header")
        lines.append(f"{k}: {v}")
    lines.append("end_header")
    head = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.asarray(image.values, dtype="<c8").ravel(order="F").tobytes()
    return head + payload


def image_from_bytes(buf: bytes) -> Image3D:
    end = buf.find(b"\nend_header\n")
    if not buf.startswith(IMAGE_MAGIC.encode() + b"\n") or end < 0:
        raise DataFormatError("not a MISAR image file")
    text = buf[:end].decode("ascii").split("\n")[1:]
    meta = {}
    for ln in text:
        k, sep, v = ln.partition(": ")
        if not sep:
            raise DataFormatError(f"malformed image header line {ln!r}")
        meta[k] = v
    try:
        dims = tuple(int(x) for x in meta.pop("dims").split())
        origin = [float(x) for x in meta.pop("origin").split()]
        spacing = [float(x) for x in meta.pop("spacing").split()]
        grid = VoxelGrid(origin, spacing, dims)
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"bad image header: {exc}") from exc
    payload = buf[end + len(b"\nend_header\n"):]
    if len(payload) != grid.size * 8:
        raise DataFormatError(f"image payload is {len(payload)} bytes, header declares {grid.size * 8}")
    values = np.frombuffer(payload, dtype="<c8").reshape(dims, order="F")
    return Image3D(values, grid, meta)


def write_image(path, image: Image3D) -> None:
    Path(path).write_bytes(image_to_bytes(image))


def read_image(path) -> Image3D:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read image file: {exc}") from exc
    return image_from_bytes(buf)
