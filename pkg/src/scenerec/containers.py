"""Versioned binary containers for descriptors, codebooks and SVM models.

Layout of every file::

    magic (ASCII, e.g. b"SKDESC1")
    uint32 little-endian header length
    UTF-8 JSON header
    raw little-endian array payload

A file whose magic carries the right family but a different version (for
example ``SKDESC2``) is rejected with :class:`ContainerVersionError`.
"""

from __future__ import annotations

import json
import re
import struct

import numpy as np

DESC_MAGIC = b"SKDESC1"
CODEBOOK_MAGIC = b"SKCBK1"
SVM_MAGIC = b"SKSVM1"


class ContainerError(ValueError):
    """Raised for a corrupt or unexpected container file."""


class ContainerVersionError(ContainerError):
    """Raised when the magic names a known family but another version."""


def write_container(path, magic: bytes, header: dict, payload: bytes) -> None:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def read_container(path, magic: bytes) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        data = fh.read()
    got = data[: len(magic)]
    if got != magic:
        family = re.match(rb"[A-Z]+", magic).group(0)
        if data.startswith(family):
            found = re.match(rb"[A-Z]+\d*", data[:16]).group(0)
            raise ContainerVersionError(
                f"{path}: container version {found.decode(errors='replace')} "
                f"is not supported (expected {magic.decode()})"
            )
        raise ContainerError(f"{path}: not a {magic.decode()} container")
    off = len(magic)
    if len(data) < off + 4:
        raise ContainerError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[off : off + 4])
    off += 4
    try:
        header = json.loads(data[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt JSON header") from exc
    return header, data[off + hlen :]


def take_array(payload: bytes, offset: int, dtype: str, count: int, path) -> tuple[np.ndarray, int]:
    nbytes = np.dtype(dtype).itemsize * count
    if offset + nbytes > len(payload):
        raise ContainerError(f"{path}: payload shorter than header declares")
    arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    return arr, offset + nbytes


# ------------------------------------------------------------- descriptors

def save_descriptors(path, kind: str, values: np.ndarray, params: dict | None = None,
                     **extra) -> None:
    """Write a (count, dim) matrix as little-endian float32 rows."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("descriptor matrix must be 2-D")
    header = {"kind": kind, "dim": int(values.shape[1]), "count": int(values.shape[0]),
              "params": params or {}}
    header.update(extra)
    write_container(path, DESC_MAGIC, header, values.astype("<f4").tobytes())


def load_descriptors(path) -> tuple[dict, np.ndarray]:
    header, payload = read_container(path, DESC_MAGIC)
    count, dim = header["count"], header["dim"]
    arr, end = take_array(payload, 0, "<f4", count * dim, path)
    if end != len(payload):
        raise ContainerError(f"{path}: trailing bytes after descriptor payload")
    return header, arr.reshape(count, dim).astype(np.float64)
