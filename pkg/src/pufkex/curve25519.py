"""Curve25519 arithmetic: X25519 key agreement and Ed25519 signatures.

Pure Python over built-in integers. X25519 follows RFC 7748 (Montgomery
ladder on the u-coordinate), Ed25519 follows RFC 8032 using extended
twisted-Edwards coordinates. XEdDSA lets an X25519 key sign, which the
server needs to vouch for a fresh ephemeral key with its certified one.

No attempt is made at constant-time execution.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

log = logging.getLogger(__name__)

P = 2**255 - 19
A24 = 121665
# prime order of the base point subgroup
L = 2**252 + 27742317777372353535851937790883648493
D = -121665 * pow(121666, P - 2, P) % P
SQRT_M1 = pow(2, (P - 1) // 4, P)

BASE_U = (9).to_bytes(32, "little")
SIGNATURE_SIZE = 64


class LowOrderResult(ValueError):
    """X25519 produced the all-zero output (low-order input point)."""


class MalformedPoint(ValueError):
    """A 32-byte string does not decode to a curve point."""


# -- field ----------------------------------------------------------------


@dataclass(frozen=True)
class FieldElement:
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value % P)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FieldElement":
        if len(data) != 32:
            raise ValueError("field elements are 32 bytes")
        return cls(int.from_bytes(data, "little") & ((1 << 255) - 1))

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(32, "little")

    def __mul__(self, other: "FieldElement") -> "FieldElement":
        return field_mul(self, other)

    def __add__(self, other: "FieldElement") -> "FieldElement":
        return FieldElement(self.value + other.value)

    def __sub__(self, other: "FieldElement") -> "FieldElement":
        return FieldElement(self.value - other.value)

    def inverse(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError("zero has no inverse")
        return FieldElement(pow(self.value, P - 2, P))


def field_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    return FieldElement(a.value * b.value % P)


def _inv(x: int) -> int:
    return pow(x, P - 2, P)


# -- X25519 ---------------------------------------------------------------


def clamp_scalar(k: bytes) -> bytes:
    if len(k) != 32:
        raise ValueError("X25519 scalars are 32 bytes")
    b = bytearray(k)
    b[0] &= 248
    b[31] &= 127
    b[31] |= 64
    return bytes(b)


def _decode_scalar(k: bytes) -> int:
    return int.from_bytes(clamp_scalar(k), "little")


def _ladder(k: int, u: int) -> int:
    x1 = u
    x2, z2 = 1, 0
    x3, z3 = u, 1
    swap = 0
    for t in reversed(range(255)):
        kt = (k >> t) & 1
        swap ^= kt
        if swap:
            x2, x3 = x3, x2
            z2, z3 = z3, z2
        swap = kt

        a = x2 + z2
        aa = a * a % P
        b = x2 - z2
        bb = b * b % P
        e = aa - bb
        c = x3 + z3
        d = x3 - z3
        da = d * a % P
        cb = c * b % P
        x3 = (da + cb) ** 2 % P
        z3 = x1 * (da - cb) ** 2 % P
        x2 = aa * bb % P
        z2 = e * (aa + A24 * e) % P
    if swap:
        x2, z2 = x3, z3
    return x2 * _inv(z2) % P


def x25519(scalar: bytes, u: bytes) -> bytes:
    """Scalar multiplication on the Montgomery u-line, per RFC 7748.

    Raises :class:`LowOrderResult` when the output is all zero.
    """
    if len(u) != 32:
        raise ValueError("u-coordinates are 32 bytes")
    k = _decode_scalar(scalar)
    u_int = int.from_bytes(u, "little") & ((1 << 255) - 1)
    out = _ladder(k, u_int % P).to_bytes(32, "little")
    if out == bytes(32):
        raise LowOrderResult("X25519 output is all zero")
    return out


def x25519_base(scalar: bytes) -> bytes:
    """X25519 with the base point u = 9.

    Computed on the birationally equivalent Edwards curve with a precomputed
    table, u = (1 + y) / (1 - y); agrees with ``x25519(scalar, BASE_U)``.
    """
    _, y, z, _ = base_mul(_decode_scalar(scalar))
    return ((z + y) * _inv(z - y) % P).to_bytes(32, "little")


@dataclass(frozen=True)
class AgreementKeyPair:
    """X25519 key pair; ``secret`` is stored clamped."""

    secret: bytes
    public: bytes

    @classmethod
    def from_secret(cls, secret: bytes) -> "AgreementKeyPair":
        clamped = clamp_scalar(secret)
        return cls(clamped, x25519_base(clamped))

    @classmethod
    def generate(cls, randbytes: Callable[[int], bytes]) -> "AgreementKeyPair":
        return cls.from_secret(randbytes(32))

    def exchange(self, peer_public: bytes) -> bytes:
        return x25519(self.secret, peer_public)

    def __repr__(self) -> str:
        return f"AgreementKeyPair(public={self.public.hex()})"


# -- Edwards25519 ---------------------------------------------------------

# Points are (X, Y, Z, T) with x = X/Z, y = Y/Z, x*y = T/Z.
Point = tuple[int, int, int, int]

IDENTITY: Point = (0, 1, 1, 0)


def _recover_x(y: int, sign: int) -> int:
    if y >= P:
        raise MalformedPoint("y coordinate not canonical")
    x2 = (y * y - 1) * _inv(D * y * y + 1) % P
    if x2 == 0:
        if sign:
            raise MalformedPoint("x = 0 with sign bit set")
        return 0
    x = pow(x2, (P + 3) // 8, P)
    if (x * x - x2) % P != 0:
        x = x * SQRT_M1 % P
    if (x * x - x2) % P != 0:
        raise MalformedPoint("no square root: not on curve")
    if (x & 1) != sign:
        x = P - x
    return x


_BY = 4 * _inv(5) % P
_BX = _recover_x(_BY, 0)
BASE: Point = (_BX, _BY, 1, _BX * _BY % P)


def point_add(p1: Point, p2: Point) -> Point:
    x1, y1, z1, t1 = p1
    x2, y2, z2, t2 = p2
    a = (y1 - x1) * (y2 - x2) % P
    b = (y1 + x1) * (y2 + x2) % P
    c = 2 * t1 * t2 * D % P
    d = 2 * z1 * z2 % P
    e, f, g, h = b - a, d - c, d + c, b + a
    return (e * f % P, g * h % P, f * g % P, e * h % P)


def point_double(p1: Point) -> Point:
    x1, y1, z1, _ = p1
    a = x1 * x1 % P
    b = y1 * y1 % P
    c = 2 * z1 * z1 % P
    h = a + b
    e = h - (x1 + y1) ** 2
    g = a - b
    f = c + g
    return (e * f % P, g * h % P, f * g % P, e * h % P)


def point_neg(p1: Point) -> Point:
    x, y, z, t = p1
    return (-x % P, y, z, -t % P)


def point_mul(s: int, p1: Point) -> Point:
    q = IDENTITY
    for bit in bin(s)[2:] if s > 0 else "":
        q = point_double(q)
        if bit == "1":
            q = point_add(q, p1)
    return q


class FixedBaseTable:
    """Radix-16 multiples of a fixed point: ``rows[i][j] = j * 16**i * Q``.

    A scalar multiple then costs at most 64 additions and no doublings.
    """

    def __init__(self, q: Point):
        self.rows: list[list[Point]] = []
        for _ in range(64):
            row = [IDENTITY, q]
            for _ in range(14):
                row.append(point_add(row[-1], q))
            self.rows.append(row)
            q = point_double(point_double(point_double(point_double(q))))

    def mul(self, s: int) -> Point:
        s %= L
        acc = IDENTITY
        for row in self.rows:
            nibble = s & 15
            if nibble:
                acc = point_add(acc, row[nibble])
            s >>= 4
        return acc


_base_table: FixedBaseTable | None = None


def base_mul(s: int) -> Point:
    global _base_table
    if _base_table is None:
        _base_table = FixedBaseTable(BASE)
    return _base_table.mul(s)


@lru_cache(maxsize=32)
def _key_table(pk: bytes) -> FixedBaseTable:
    return FixedBaseTable(decode_point(pk))


def point_equal(p1: Point, p2: Point) -> bool:
    x1, y1, z1, _ = p1
    x2, y2, z2, _ = p2
    return (x1 * z2 - x2 * z1) % P == 0 and (y1 * z2 - y2 * z1) % P == 0


def encode_point(pt: Point) -> bytes:
    x, y, z, _ = pt
    zi = _inv(z)
    x, y = x * zi % P, y * zi % P
    return (y | ((x & 1) << 255)).to_bytes(32, "little")


def decode_point(data: bytes) -> Point:
    if len(data) != 32:
        raise MalformedPoint("point encodings are 32 bytes")
    y = int.from_bytes(data, "little")
    sign = y >> 255
    y &= (1 << 255) - 1
    x = _recover_x(y, sign)
    return (x, y, 1, x * y % P)


def _sha512_int(*parts: bytes) -> int:
    return int.from_bytes(hashlib.sha512(b"".join(parts)).digest(), "little")


def _expand_seed(seed: bytes) -> tuple[int, bytes]:
    if len(seed) != 32:
        raise ValueError("Ed25519 seeds are 32 bytes")
    h = hashlib.sha512(seed).digest()
    a = int.from_bytes(h[:32], "little")
    a &= (1 << 254) - 8
    a |= 1 << 254
    return a, h[32:]


@dataclass(frozen=True)
class SigningKeyPair:
    seed: bytes
    public: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "SigningKeyPair":
        a, _ = _expand_seed(seed)
        return cls(seed, encode_point(base_mul(a)))

    @classmethod
    def generate(cls, randbytes: Callable[[int], bytes]) -> "SigningKeyPair":
        return cls.from_seed(randbytes(32))

    def __repr__(self) -> str:
        return f"SigningKeyPair(public={self.public.hex()})"


def ed_sign(kp: SigningKeyPair, msg: bytes) -> bytes:
    a, prefix = _expand_seed(kp.seed)
    r = _sha512_int(prefix, msg) % L
    big_r = encode_point(base_mul(r))
    h = _sha512_int(big_r, kp.public, msg) % L
    s = (r + h * a) % L
    return big_r + s.to_bytes(32, "little")


def _verify_equation(a_pt: Point | FixedBaseTable, a_bytes: bytes, msg: bytes, sig: bytes) -> bool:
    r_bytes = sig[:32]
    s = int.from_bytes(sig[32:], "little")
    if s >= L:
        return False
    decode_point(r_bytes)
    h = _sha512_int(r_bytes, a_bytes, msg) % L
    ha = a_pt.mul(h) if isinstance(a_pt, FixedBaseTable) else point_mul(h, a_pt)
    check = point_add(base_mul(s), point_neg(ha))
    return encode_point(check) == r_bytes


def ed_verify(pk: bytes, msg: bytes, sig: bytes) -> bool:
    """Accept iff ``sig`` is a valid Ed25519 signature of ``msg`` under ``pk``.

    Undecodable ``pk`` or R are rejected (logged at debug level).
    """
    if len(sig) != SIGNATURE_SIZE:
        return False
    try:
        return _verify_equation(_key_table(bytes(pk)), pk, msg, sig)
    except MalformedPoint as exc:
        log.debug("signature rejected: %s", exc)
        return False


# -- XEdDSA: signatures under an X25519 key --------------------------------

_HASH1_PREFIX = b"\xfe" + b"\xff" * 31


def _mont_to_edwards(u: int) -> Point:
    if u == P - 1:
        raise MalformedPoint("u = -1 has no Edwards image")
    y = (u - 1) * _inv(u + 1) % P
    x = _recover_x(y, 0)
    return (x, y, 1, x * y % P)


def xeddsa_sign(secret: bytes, msg: bytes, nonce: bytes) -> bytes:
    """Sign with a (clamped) X25519 secret; ``nonce`` is 64 random bytes."""
    k = _decode_scalar(secret)
    e = base_mul(k)
    a_bytes = bytearray(encode_point(e))
    if a_bytes[31] & 0x80:
        a = -k % L
        a_bytes[31] &= 0x7F
    else:
        a = k % L
    a_bytes = bytes(a_bytes)
    r = _sha512_int(_HASH1_PREFIX, a.to_bytes(32, "little"), msg, nonce) % L
    big_r = encode_point(base_mul(r))
    h = _sha512_int(big_r, a_bytes, msg) % L
    s = (r + h * a) % L
    return big_r + s.to_bytes(32, "little")


def xeddsa_verify(u: bytes, msg: bytes, sig: bytes) -> bool:
    if len(sig) != SIGNATURE_SIZE or len(u) != 32:
        return False
    u_int = int.from_bytes(u, "little")
    if u_int >= P:
        return False
    try:
        a_pt = _mont_to_edwards(u_int)
        return _verify_equation(a_pt, encode_point(a_pt), msg, sig)
    except MalformedPoint as exc:
        log.debug("xeddsa signature rejected: %s", exc)
        return False
