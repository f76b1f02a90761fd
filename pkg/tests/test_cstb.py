import struct

import numpy as np
import pytest

from comptomo.cstb import (
    CstbFormatError,
    CstbWriter,
    HashMismatchError,
    check_upstream_hash,
    file_sha256,
    read_cstb,
    read_manifest,
    write_cstb,
    write_manifest,
)


class TestRoundTrip:
    def test_2d_bit_exact(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(7, 5))
        path = tmp_path / "a.cstb"
        write_cstb(path, arr)
        back = read_cstb(path)
        assert back.dtype == np.float64
        assert np.array_equal(back, arr)

    def test_1d_and_3d(self, tmp_path):
        for shape in [(4,), (2, 3, 4)]:
            arr = np.arange(np.prod(shape), dtype=float).reshape(shape)
            path = tmp_path / "b.cstb"
            write_cstb(path, arr)
            assert np.array_equal(read_cstb(path), arr)

    def test_exact_byte_layout(self, tmp_path):
        arr = np.array([[1.0, 2.0], [3.0, 4.0]])
        path = tmp_path / "c.cstb"
        write_cstb(path, arr)
        raw = path.read_bytes()
        assert raw[:4] == b"CSTB"
        version, ndim = struct.unpack("<II", raw[4:12])
        assert (version, ndim) == (1, 2)
        assert struct.unpack("<II", raw[12:20]) == (2, 2)
        assert np.frombuffer(raw[20:], dtype="<f8").tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_mmap_read(self, tmp_path):
        arr = np.random.default_rng(1).normal(size=(10, 3))
        path = tmp_path / "d.cstb"
        write_cstb(path, arr)
        view = read_cstb(path, mmap=True)
        assert np.array_equal(np.asarray(view), arr)


class TestValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cstb"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(CstbFormatError):
            read_cstb(path)

    def test_truncated_payload(self, tmp_path):
        arr = np.ones((4, 4))
        path = tmp_path / "t.cstb"
        write_cstb(path, arr)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(CstbFormatError):
            read_cstb(path)


class TestStreamingWriter:
    def test_row_blocks_match_direct_write(self, tmp_path):
        arr = np.random.default_rng(2).normal(size=(12, 6))
        direct = tmp_path / "direct.cstb"
        streamed = tmp_path / "streamed.cstb"
        write_cstb(direct, arr)
        with CstbWriter(streamed, arr.shape) as writer:
            writer.write_rows(4, arr[4:9])
            writer.write_rows(0, arr[0:4])
            writer.write_rows(9, arr[9:])
        assert direct.read_bytes() == streamed.read_bytes()

    def test_strided_rows(self, tmp_path):
        arr = np.arange(20, dtype=float).reshape(5, 4)
        path = tmp_path / "s.cstb"
        with CstbWriter(path, arr.shape) as writer:
            writer.write_strided_rows([4, 2, 0, 1, 3], arr[[4, 2, 0, 1, 3]])
        assert np.array_equal(read_cstb(path), arr)

    def test_missing_rows_detected(self, tmp_path):
        path = tmp_path / "m.cstb"
        writer = CstbWriter(path, (4, 2))
        writer.write_rows(0, np.zeros((2, 2)))
        with pytest.raises(CstbFormatError):
            writer.close()


class TestManifest:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.manifest"
        write_manifest(path, {"seed": 7, "scenario": "i"})
        back = read_manifest(path)
        assert back == {"seed": "7", "scenario": "i"}

    def test_hash_check(self, tmp_path):
        data = tmp_path / "x.cstb"
        write_cstb(data, np.ones(3))
        manifest = {"x_sha256": file_sha256(data)}
        check_upstream_hash(manifest, "x_sha256", data)
        write_cstb(data, np.zeros(3))
        with pytest.raises(HashMismatchError):
            check_upstream_hash(manifest, "x_sha256", data)

    def test_missing_entry(self, tmp_path):
        data = tmp_path / "y.cstb"
        write_cstb(data, np.ones(3))
        with pytest.raises(HashMismatchError):
            check_upstream_hash({}, "y_sha256", data)
