"""Hash, MAC, KDF and a deterministic random bit generator.

Everything here is built on SHA-256. ``hashlib`` and ``hmac`` from the
standard library supply the compression function and HMAC; HKDF and the
DRBG stream are layered on top.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
from dataclasses import dataclass

DIGEST_SIZE = 32
HKDF_MAX_LENGTH = 255 * DIGEST_SIZE


class LengthExceeded(ValueError):
    """Requested HKDF output is longer than 255 hash blocks."""


def sha256(msg: bytes) -> bytes:
    return hashlib.sha256(msg).digest()


def hmac(key: bytes, msg: bytes) -> bytes:
    """HMAC-SHA-256 (RFC 2104)."""
    return _hmac.new(key, msg, hashlib.sha256).digest()


def hkdf_extract(salt: bytes, ikm: bytes) -> bytes:
    if not salt:
        salt = bytes(DIGEST_SIZE)
    return hmac(salt, ikm)


def hkdf_expand(prk: bytes, info: bytes, length: int) -> bytes:
    if length > HKDF_MAX_LENGTH:
        raise LengthExceeded(f"HKDF output limited to {HKDF_MAX_LENGTH} bytes, got {length}")
    if length < 0:
        raise ValueError("negative length")
    okm = bytearray()
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac(prk, block + info + bytes([counter]))
        okm += block
        counter += 1
    return bytes(okm[:length])


def hkdf(salt: bytes, ikm: bytes, info: bytes, length: int) -> bytes:
    """HKDF-SHA-256 extract-then-expand (RFC 5869)."""
    if length > HKDF_MAX_LENGTH:
        raise LengthExceeded(f"HKDF output limited to {HKDF_MAX_LENGTH} bytes, got {length}")
    return hkdf_expand(hkdf_extract(salt, ikm), info, length)


_DRBG_SALT = b"pufkex-drbg-seed"
_DRBG_INFO = b"pufkex-drbg-block"


@dataclass(frozen=True)
class DrbgState:
    """Position in a counter-mode HKDF-expand stream.

    ``counter`` is the index of the next block to generate; ``pending`` holds
    the unread tail of the last generated block so that the byte stream is
    identical no matter how reads are split.
    """

    key: bytes
    counter: int = 0
    pending: bytes = b""

    def __repr__(self) -> str:
        return f"DrbgState(counter={self.counter}, pending={len(self.pending)})"


def drbg_seed(seed: bytes) -> DrbgState:
    return DrbgState(key=hkdf_extract(_DRBG_SALT, seed))


def drbg_bytes(state: DrbgState, n: int) -> tuple[bytes, DrbgState]:
    """Return the next ``n`` stream bytes and the advanced state."""
    if n < 0:
        raise ValueError("negative byte count")
    out = bytearray(state.pending[:n])
    pending = state.pending[n:]
    counter = state.counter
    while len(out) < n:
        block = hkdf_expand(state.key, _DRBG_INFO + counter.to_bytes(8, "big"), DIGEST_SIZE)
        counter += 1
        take = n - len(out)
        out += block[:take]
        pending = block[take:]
    return bytes(out), DrbgState(state.key, counter, pending)


class Drbg:
    """Mutable convenience wrapper around :class:`DrbgState` for role objects."""

    def __init__(self, seed: bytes):
        self.state = drbg_seed(seed)

    def read(self, n: int) -> bytes:
        out, self.state = drbg_bytes(self.state, n)
        return out
