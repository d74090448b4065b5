import numpy as np
import pytest
from hypothesis import given, strategies as st

from earlybird import io
from earlybird.errors import DataError


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_pgm_roundtrip_lossless_on_8bit_values(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w)) / 255.0
    assert np.array_equal(io.decode_pgm(io.encode_pgm(img)), img)


def test_pgm_bytes_stable(tmp_path, rng):
    img = rng.integers(0, 256, (6, 5)) / 255.0
    p = tmp_path / "a.pgm"
    io.write_pgm(p, img)
    data = p.read_bytes()
    assert data.startswith(b"P5\n5 6\n255\n")
    io.write_pgm(p, io.read_pgm(p))
    assert p.read_bytes() == data


def test_pgm_header_comment():
    assert np.array_equal(io.decode_pgm(b"P5\n# c\n2 1\n255\n\x00\xff"), [[0.0, 1.0]])


def test_pgm_errors():
    with pytest.raises(DataError):
        io.decode_pgm(b"P2\n1 1\n255\n0")
    with pytest.raises(DataError):
        io.decode_pgm(b"P5\n4 4\n255\n\x00")


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 32 - 1))
def test_depth_roundtrip_lossless(h, w, seed):
    d = np.random.default_rng(seed).uniform(0, 10, (h, w)).astype(np.float32).astype(np.float64)
    data = io.encode_depth(d)
    assert len(data) == 12 + 4 * h * w
    assert np.array_equal(io.decode_depth(data), d)


def test_depth_file_roundtrip_and_errors(tmp_path, rng):
    d = rng.uniform(0, 3, (4, 3)).astype(np.float32).astype(np.float64)
    p = tmp_path / "d.ebd"
    io.write_depth(p, d)
    assert p.read_bytes()[:4] == io.DEPTH_MAGIC
    assert np.array_equal(io.read_depth(p), d)
    with pytest.raises(DataError):
        io.decode_depth(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(DataError):
        io.decode_depth(p.read_bytes()[:-1])
