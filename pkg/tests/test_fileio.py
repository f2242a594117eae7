import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from misar import fileio
from misar.errors import DataFormatError
from misar.imaging import Image3D, VoxelGrid
from misar.simulator import RawDataCube
from misar.waveform import ChirpParams


def _cube(nb=2, nc=3, ns=5, seed=0):
    rng = np.random.default_rng(seed)
    data = (rng.standard_normal((nb, nc, ns)) + 1j * rng.standard_normal((nb, nc, ns))).astype(np.complex64)
    return RawDataCube(data, ChirpParams(n_samples=ns), 20e-3, bytes(range(32)), True, True, 1234)


def test_header_layout():
    buf = fileio.cube_to_bytes(_cube())
    assert buf[:4] == b"MISR" and buf[4] == 1
    assert struct.unpack_from("<3I", buf, 8) == (2, 3, 5)
    assert struct.unpack_from("<5d", buf, 20) == (22e9, 26e9, 30e-6, 40e-6, 20e-3)
    assert buf[60] == 0x03
    assert struct.unpack_from("<Q", buf, 64)[0] == 1234
    assert buf[72:104] == bytes(range(32))
    assert buf[104:128] == bytes(24)
    assert len(buf) == 128 + 2 * 3 * 5 * 8
    # sample fastest, then channel, then burst
    c = _cube()
    re, im = struct.unpack_from("<2f", buf, 128 + 8 * (1 * 15 + 2 * 5 + 4))
    assert complex(re, im) == complex(c.data[1, 2, 4])


def test_cube_round_trip(tmp_path):
    c = _cube()
    fileio.write_cube(tmp_path / "c.bin", c)
    back = fileio.read_cube(tmp_path / "c.bin")
    np.testing.assert_array_equal(back.data, c.data)
    assert back.params == c.params and back.seed == 1234 and back.noisy and back.spreading_loss
    assert fileio.cube_to_bytes(back) == (tmp_path / "c.bin").read_bytes()


def test_truncated_payload():
    buf = fileio.cube_to_bytes(_cube())
    with pytest.raises(DataFormatError) as exc:
        fileio.cube_from_bytes(buf[:-8])
    assert exc.value.exit_code == 4
    with pytest.raises(DataFormatError):
        fileio.cube_from_bytes(buf[:100])


def test_version_two_unsupported():
    buf = bytearray(fileio.cube_to_bytes(_cube()))
    buf[4] = 0x02
    with pytest.raises(DataFormatError, match="unsupported cube version 2"):
        fileio.cube_from_bytes(bytes(buf))


def test_bad_magic():
    buf = bytearray(fileio.cube_to_bytes(_cube()))
    buf[:4] = b"NOPE"
    with pytest.raises(DataFormatError, match="magic"):
        fileio.cube_from_bytes(bytes(buf))


def test_missing_file(tmp_path):
    with pytest.raises(DataFormatError):
        fileio.read_cube(tmp_path / "absent.bin")


def _img(dims=(3, 4, 2)):
    rng = np.random.default_rng(1)
    v = (rng.standard_normal(dims) + 1j * rng.standard_normal(dims)).astype(np.complex64)
    return Image3D(v, VoxelGrid((0.1, -0.2, 0.3), (0.005, 0.004, 0.003), dims), {"cube_hash": "ab" * 32,
                                                                             "upsample": 8})


def test_image_round_trip(tmp_path):
    img = _img()
    fileio.write_image(tmp_path / "i.bin", img)
    back = fileio.read_image(tmp_path / "i.bin")
    np.testing.assert_array_equal(back.values, img.values)
    assert back.grid.dims == img.grid.dims
    np.testing.assert_array_equal(back.grid.origin, img.grid.origin)
    assert back.metadata == {"cube_hash": "ab" * 32, "upsample": "8"}
    assert fileio.image_to_bytes(back) == (tmp_path / "i.bin").read_bytes()


def test_image_x_fastest():
    img = _img()
    buf = fileio.image_to_bytes(img)
    start = buf.index(b"end_header\n") + len(b"end_header\n")
    first = np.frombuffer(buf[start:start + 16], "<c8")
    np.testing.assert_array_equal(first, img.values[:2, 0, 0])


def test_image_errors():
    buf = fileio.image_to_bytes(_img())
    with pytest.raises(DataFormatError):
        fileio.image_from_bytes(buf[:-1])
    with pytest.raises(DataFormatError):
        fileio.image_from_bytes(b"garbage")
    with pytest.raises(ValueError):
        fileio.image_to_bytes(Image3D(np.zeros((1, 1, 1)), VoxelGrid((0, 0, 0), 1.0, (1, 1, 1)),
                                      {"bad": "two\nlines"}))


@settings(max_examples=40, deadline=None)
@given(nb=st.integers(1, 3), nc=st.integers(1, 4), ns=st.integers(2, 9), seed=st.integers(0, 2 ** 32 - 1))
def test_cube_round_trip_property(nb, nc, ns, seed):
    c = _cube(nb, nc, ns, seed % 1000)
    c = RawDataCube(c.data, c.params, c.burst_interval, c.fingerprint, False, bool(seed % 2), seed)
    buf = fileio.cube_to_bytes(c)
    assert fileio.cube_to_bytes(fileio.cube_from_bytes(buf)) == buf


@settings(max_examples=40, deadline=None)
@given(dims=st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)),
       spacing=st.floats(1e-4, 1.0), ox=st.floats(-10, 10))
def test_image_round_trip_property(dims, spacing, ox):
    rng = np.random.default_rng(0)
    v = (rng.standard_normal(dims) + 1j * rng.standard_normal(dims)).astype(np.complex64)
    img = Image3D(v, VoxelGrid((ox, 0.0, -ox), spacing, dims), {"k": "v"})
    buf = fileio.image_to_bytes(img)
    assert fileio.image_to_bytes(fileio.image_from_bytes(buf)) == buf
