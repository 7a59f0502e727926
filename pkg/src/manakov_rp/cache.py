"""On-disk cache of coefficient tensors.

File layout (little-endian)::

    header  magic "MRPT" (4 bytes), version u16, kind code u16,
            provenance key (32 bytes), channel i32, N_max i32, entry count i64
    records n i32, k i32, k' i32, re f64, im f64   (28 bytes each)

The kind code is 0..4 for S, S~, C, C~, D plus 8 for the second
polarization. The channel index is 0 for the SPM kinds.
"""
from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .nli import KINDS, NliTensor

MAGIC = b"MRPT"
VERSION = 1
HEADER = struct.Struct("<4sHH32siiq")
RECORD = np.dtype([("n", "<i4"), ("k", "<i4"), ("kp", "<i4"), ("re", "<f8"), ("im", "<f8")])
SUFFIX = ".nlit"


class CacheError(Exception):
    """Unreadable or inconsistent cache file."""


class CorruptCacheError(CacheError):
    pass


class KeyMismatchError(CacheError):
    pass


def kind_code(kind, pol=1):
    if kind not in KINDS:
        raise ValueError(f"unknown tensor kind {kind!r}")
    if pol not in (1, 2):
        raise ValueError("pol must be 1 or 2")
    return KINDS.index(kind) + 8 * (pol - 1)


def decode_kind(code):
    kind, pol = code % 8, 1 + code // 8
    if kind >= len(KINDS) or pol > 2:
        raise CorruptCacheError(f"bad kind code {code}")
    return KINDS[kind], pol


def cache_path(directory, key):
    return Path(directory) / (bytes(key).hex() + SUFFIX)


def write_tensor(tensor, path):
    """Write ``tensor`` to ``path`` atomically (temp file, then rename)."""
    path = Path(path)
    key = bytes(tensor.provenance_key)
    if len(key) != 32:
        raise ValueError("provenance key must be 32 bytes")
    rec = np.empty(len(tensor), RECORD)
    rec["n"], rec["k"], rec["kp"] = tensor.index.T
    rec["re"] = tensor.values.real
    rec["im"] = tensor.values.imag
    head = HEADER.pack(MAGIC, VERSION, kind_code(tensor.kind, tensor.pol), key,
                       0 if tensor.channel is None else int(tensor.channel),
                       int(tensor.n_max), len(tensor))
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(head)
            fh.write(rec.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_tensor(path, expected_key=None):
    """Read a tensor file, checking its key against ``expected_key`` if given."""
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise CorruptCacheError(f"{path}: truncated header")
    magic, version, code, key, c, n_max, count = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CorruptCacheError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptCacheError(f"{path}: unsupported version {version}")
    if expected_key is not None and key != bytes(expected_key):
        raise KeyMismatchError(f"{path}: provenance key {key.hex()[:16]}... does not match "
                               f"requested {bytes(expected_key).hex()[:16]}...")
    if count < 0 or len(blob) != HEADER.size + count * RECORD.itemsize:
        raise CorruptCacheError(f"{path}: expected {count} records, file size "
                                f"{len(blob)} disagrees")
    kind, pol = decode_kind(code)
    rec = np.frombuffer(blob, RECORD, count=count, offset=HEADER.size)
    index = np.stack([rec["n"], rec["k"], rec["kp"]], axis=1)
    values = rec["re"] + 1j * rec["im"]
    try:
        return NliTensor(kind, int(c), index, values, int(n_max), key, pol)
    except ValueError as exc:
        raise CorruptCacheError(f"{path}: {exc}") from exc


def cache_store(tensor, directory):
    """Store under ``directory`` keyed by the tensor's provenance key."""
    return write_tensor(tensor, cache_path(directory, tensor.provenance_key))


def cache_load(key, directory):
    """Load the tensor stored under ``key``; ``FileNotFoundError`` if absent."""
    return read_tensor(cache_path(directory, key), expected_key=key)


def cached_tensor(directory, key, build):
    """Load ``key`` from ``directory`` or build, store and return it."""
    try:
        return cache_load(key, directory)
    except FileNotFoundError:
        pass
    tensor = build()
    if bytes(tensor.provenance_key) != bytes(key):
        raise KeyMismatchError("built tensor carries a different provenance key")
    cache_store(tensor, directory)
    return tensor


def dump_csv(tensor, path):
    """Write ``n,k,k',re,im`` rows with round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "k", "kp", "re", "im"])
        for (n, k, kp), v in zip(tensor.index, tensor.values):
            w.writerow([int(n), int(k), int(kp), repr(float(v.real)), repr(float(v.imag))])
