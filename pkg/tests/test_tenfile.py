"""Tests for the binary tensor container."""

import struct

import numpy as np
import pytest

from cmrecon.rng import RngStream
from cmrecon.tenfile import MAGIC, TenFormatError, load_ten, save_ten


class TestRoundtrip:
    @pytest.mark.parametrize("shape", [(3,), (2, 5), (1, 1, 4, 4),
                                       (2, 3, 1, 2, 2)])
    def test_shapes_and_values_survive(self, tmp_path, shape):
        arr = RngStream(0, "ten").normal(shape)
        p = tmp_path / "a.ten"
        save_ten(p, arr)
        back = load_ten(p)
        assert back.shape == arr.shape
        assert back.dtype == np.float64
        assert np.array_equal(back, arr)

    def test_special_values_are_bit_exact(self, tmp_path):
        arr = np.array([0.0, -0.0, np.inf, -np.inf, np.nan, 1e-300, 1e300])
        p = tmp_path / "s.ten"
        save_ten(p, arr)
        back = load_ten(p)
        assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))

    def test_integer_input_coerced_to_float64(self, tmp_path):
        p = tmp_path / "i.ten"
        save_ten(p, np.arange(6).reshape(2, 3))
        back = load_ten(p)
        assert back.dtype == np.float64
        assert np.array_equal(back, np.arange(6.0).reshape(2, 3))

    def test_save_is_deterministic(self, tmp_path):
        arr = RngStream(1, "ten.det").uniform((4, 4))
        save_ten(tmp_path / "a.ten", arr)
        save_ten(tmp_path / "b.ten", arr)
        assert (tmp_path / "a.ten").read_bytes() == \
            (tmp_path / "b.ten").read_bytes()


class TestHeader:
    def test_layout(self, tmp_path):
        p = tmp_path / "h.ten"
        save_ten(p, np.zeros((2, 3)))
        raw = p.read_bytes()
        assert raw[:4] == MAGIC
        version, rank = struct.unpack_from("<HB", raw, 4)
        assert (version, rank) == (1, 2)
        assert struct.unpack_from("<2I", raw, 7) == (2, 3)
        assert len(raw) == 7 + 8 + 6 * 8

    def test_scalar_rank_rejected(self, tmp_path):
        with pytest.raises(TenFormatError, match="rank"):
            save_ten(tmp_path / "x.ten", np.array(1.0))


class TestCorruption:
    def _good(self, tmp_path):
        p = tmp_path / "g.ten"
        save_ten(p, np.ones((2, 2)))
        return p, bytearray(p.read_bytes())

    def test_bad_magic(self, tmp_path):
        p, raw = self._good(tmp_path)
        raw[:4] = b"NOPE"
        p.write_bytes(raw)
        with pytest.raises(TenFormatError, match="magic"):
            load_ten(p)

    def test_unsupported_version(self, tmp_path):
        p, raw = self._good(tmp_path)
        raw[4:6] = struct.pack("<H", 9)
        p.write_bytes(raw)
        with pytest.raises(TenFormatError, match="version"):
            load_ten(p)

    def test_truncated_header(self, tmp_path):
        p, raw = self._good(tmp_path)
        p.write_bytes(raw[:5])
        with pytest.raises(TenFormatError, match="truncated"):
            load_ten(p)

    def test_truncated_dims(self, tmp_path):
        p, raw = self._good(tmp_path)
        p.write_bytes(raw[:9])  # rank says 2 dims, only part of one present
        with pytest.raises(TenFormatError, match="dims"):
            load_ten(p)

    def test_short_payload(self, tmp_path):
        p, raw = self._good(tmp_path)
        p.write_bytes(raw[:-8])
        with pytest.raises(TenFormatError, match="payload"):
            load_ten(p)

    def test_trailing_garbage(self, tmp_path):
        p, raw = self._good(tmp_path)
        p.write_bytes(bytes(raw) + b"\x00")
        with pytest.raises(TenFormatError, match="payload"):
            load_ten(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_ten(tmp_path / "absent.ten")
