"""CSTB array files and run manifests.

CSTB is the on-disk exchange format of the toolkit: a fixed little-endian
header (magic ``CSTB``, version, ndim, dims as unsigned 32-bit) followed by
the row-major float64 payload.  Large matrices are written through
:class:`CstbWriter`, which streams blocks of rows without holding the whole
array in memory.

Manifests are flat ``key=value`` text files carrying the configuration and
SHA-256 hashes of upstream artifacts, so every pipeline stage can refuse to
run on stale inputs.
"""

import hashlib
import struct

import numpy as np

MAGIC = b"CSTB"
VERSION = 1
_HEADER_HEAD = struct.Struct("<4sII")  # magic, version, ndim


class CstbFormatError(RuntimeError):
    """Raised when a file does not follow the CSTB layout."""


class HashMismatchError(RuntimeError):
    """Raised when a manifest hash does not match the file on disk."""


def _pack_header(shape):
    dims = struct.pack(f"<{len(shape)}I", *shape)
    return _HEADER_HEAD.pack(MAGIC, VERSION, len(shape)) + dims


def header_size(ndim):
    return _HEADER_HEAD.size + 4 * ndim


def write_cstb(path, array):
    """Write an array to ``path`` in CSTB layout."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_pack_header(arr.shape))
        fh.write(arr.tobytes())


def read_header(fh):
    head = fh.read(_HEADER_HEAD.size)
    if len(head) != _HEADER_HEAD.size:
        raise CstbFormatError("truncated header")
    magic, version, ndim = _HEADER_HEAD.unpack(head)
    if magic != MAGIC:
        raise CstbFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CstbFormatError(f"unsupported version {version}")
    raw = fh.read(4 * ndim)
    if len(raw) != 4 * ndim:
        raise CstbFormatError("truncated dimension list")
    return struct.unpack(f"<{ndim}I", raw)


def read_cstb(path, mmap=False):
    """Read a CSTB file; ``mmap=True`` maps the payload read-only."""
    with open(path, "rb") as fh:
        shape = read_header(fh)
        offset = fh.tell()
        if mmap:
            return np.memmap(
                path, dtype="<f8", mode="r", offset=offset, shape=tuple(shape)
            )
        payload = fh.read()
    expected = 8 * int(np.prod(shape))
    if len(payload) != expected:
        raise CstbFormatError(
            f"payload has {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


class CstbWriter:
    """Streaming row-block writer for large 2D CSTB files.

    Rows may be written in any order and in any grouping; the file is laid
    out row-major.  ``close`` verifies that every row was written exactly
    once.
    """

    def __init__(self, path, shape):
        if len(shape) != 2:
            raise ValueError("CstbWriter handles 2D arrays")
        self.path = path
        self.shape = tuple(int(s) for s in shape)
        self._offset = header_size(2)
        self._written = np.zeros(self.shape[0], dtype=bool)
        self._fh = open(path, "w+b")
        self._fh.write(_pack_header(self.shape))
        # reserve the payload so sparse row writes land in a full-size file
        self._fh.truncate(self._offset + 8 * self.shape[0] * self.shape[1])

    def write_rows(self, start_row, block):
        block = np.ascontiguousarray(np.asarray(block, dtype="<f8"))
        if block.ndim == 1:
            block = block[None, :]
        n_rows, n_cols = block.shape
        if n_cols != self.shape[1]:
            raise ValueError(f"row length {n_cols} != {self.shape[1]}")
        if start_row < 0 or start_row + n_rows > self.shape[0]:
            raise ValueError("row block out of range")
        self._fh.seek(self._offset + 8 * start_row * self.shape[1])
        self._fh.write(block.tobytes())
        self._written[start_row : start_row + n_rows] = True

    def write_strided_rows(self, row_indices, block):
        """Write non-contiguous rows (one seek per row)."""
        block = np.ascontiguousarray(np.asarray(block, dtype="<f8"))
        for idx, row in zip(row_indices, block):
            self.write_rows(int(idx), row)

    def close(self):
        if self._fh is None:
            return
        missing = int((~self._written).sum())
        self._fh.close()
        self._fh = None
        if missing:
            raise CstbFormatError(f"{missing} rows were never written")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        elif self._fh is not None:
            self._fh.close()
            self._fh = None


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, entries):
    """Write a flat key=value manifest; values are stringified."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path):
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


def check_upstream_hash(manifest, key, path):
    """Verify that ``path`` still matches the hash recorded under ``key``."""
    recorded = manifest.get(key)
    if recorded is None:
        raise HashMismatchError(f"manifest lacks hash entry {key!r}")
    actual = file_sha256(path)
    if actual != recorded:
        raise HashMismatchError(
            f"{path} hash {actual[:12]}... does not match recorded {recorded[:12]}..."
        )
