"""Portable keyed 64-bit hashing of symbols.

A symbol is first reduced to a 64-bit FNV-1a digest of its byte
serialization (UTF-8 for ``str``, raw for ``bytes``, 8-byte little-endian
two's complement for integers). The digest is then keyed by XOR with a key
and run through the MurmurHash3 ``fmix64`` finalizer twice. Everything is
done in unsigned 64-bit arithmetic, so results do not depend on the
platform or on Python's randomized ``hash``.
"""
from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

_U64 = np.uint64


def serialize_symbol(s) -> bytes:
    if isinstance(s, bytes):
        return s
    if isinstance(s, str):
        return s.encode("utf-8")
    if isinstance(s, (int, np.integer)):
        return int(s).to_bytes(8, "little", signed=True)
    raise TypeError(f"cannot hash symbol of type {type(s).__name__}")


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def _fnv1a64_ints(values: np.ndarray) -> np.ndarray:
    """Vectorized FNV-1a over the 8-byte little-endian form of int64 values."""
    raw = values.astype("<i8").view(np.uint8).reshape(-1, 8)
    h = np.full(raw.shape[0], FNV_OFFSET, dtype=_U64)
    prime = _U64(FNV_PRIME)
    with np.errstate(over="ignore"):
        for i in range(8):
            h = (h ^ raw[:, i].astype(_U64)) * prime
    return h


def symbol_digests(symbols) -> np.ndarray:
    """FNV-1a digests of a sequence of symbols as a ``uint64`` array."""
    arr = np.asarray(symbols)
    if arr.dtype.kind in "iu" and arr.ndim == 1:
        return _fnv1a64_ints(arr.astype(np.int64))
    return np.array([fnv1a64(serialize_symbol(s)) for s in symbols], dtype=_U64)


def fmix64(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=_U64)
    with np.errstate(over="ignore"):
        h = h ^ (h >> _U64(33))
        h = h * _U64(0xFF51AFD7ED558CCD)
        h = h ^ (h >> _U64(33))
        h = h * _U64(0xC4CEB9FE1A85EC53)
        h = h ^ (h >> _U64(33))
    return h


def splitmix64(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=_U64)
    with np.errstate(over="ignore"):
        x = x + _U64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
    return x ^ (x >> _U64(31))


def derive_key(*parts) -> np.ndarray:
    """Combine integer parts (broadcastable arrays allowed) into 64-bit keys."""
    h = np.asarray(_U64(0x243F6A8885A308D3))
    for part in parts:
        part = np.asarray(part).astype(np.int64).astype(_U64)
        h = splitmix64(h ^ splitmix64(part))
    return h


def keyed_hash(digests, key) -> np.ndarray:
    """Keyed avalanche of precomputed digests; broadcasts over both arguments."""
    digests = np.asarray(digests, dtype=_U64)
    key = np.asarray(key, dtype=_U64)
    rot = (key << _U64(32)) | (key >> _U64(32))
    return fmix64(fmix64(digests ^ key) ^ rot)
