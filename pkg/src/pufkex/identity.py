"""Device and server certificates issued by the trusted third party."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .curve25519 import SIGNATURE_SIZE, SigningKeyPair, ed_sign, ed_verify
from .fuzzy import pack_bits, unpack_bits
from .wire import MalformedTlv, decode_tlv, encode_tlv

ID_BYTES = 6
KEY_BYTES = 32


class MalformedCertificate(ValueError):
    pass


class CertKind(IntEnum):
    DEVICE = 0x01
    SERVER = 0x02


class Tag(IntEnum):
    ID = 0x01
    HD = 0x02
    PK = 0x03
    SIG = 0x04
    KIND = 0x05


def device_id(value: int | bytes) -> bytes:
    """Normalize an integer or 6-byte string into a 48-bit device ID."""
    if isinstance(value, int):
        if not 0 <= value < 1 << 48:
            raise ValueError("device IDs are 48 bits")
        return value.to_bytes(ID_BYTES, "big")
    if len(value) != ID_BYTES:
        raise ValueError(f"device IDs are {ID_BYTES} bytes, got {len(value)}")
    return bytes(value)


@dataclass(frozen=True)
class DeviceCertificate:
    id: bytes
    hd: bytes
    pk: bytes
    sig: bytes

    kind = CertKind.DEVICE

    @property
    def helper_bits(self) -> np.ndarray:
        return unpack_bits(self.hd)

    def preimage(self) -> bytes:
        return cert_preimage(CertKind.DEVICE, self.id, self.pk, self.hd)

    def __repr__(self) -> str:
        return f"DeviceCertificate(id={self.id.hex()}, hd=<{len(self.hd)} bytes>, pk={self.pk.hex()[:16]}...)"


@dataclass(frozen=True)
class ServerCertificate:
    id: bytes
    pk: bytes
    sig: bytes

    kind = CertKind.SERVER

    def preimage(self) -> bytes:
        return cert_preimage(CertKind.SERVER, self.id, self.pk)

    def __repr__(self) -> str:
        return f"ServerCertificate(id={self.id.hex()}, pk={self.pk.hex()[:16]}...)"


Certificate = DeviceCertificate | ServerCertificate


def cert_preimage(kind: CertKind, id: bytes, pk: bytes, hd: bytes | None = None) -> bytes:
    """Signed bytes: kind | ID | [HD, device only] | PK."""
    kind = CertKind(kind)
    if (kind is CertKind.DEVICE) != (hd is not None):
        raise ValueError("helper data belongs in device certificates only")
    return bytes([kind]) + id + (hd or b"") + pk


def _as_hd_bytes(hd: bytes | np.ndarray) -> bytes:
    return hd if isinstance(hd, bytes) else pack_bits(hd)


def issue_device_cert(ttp: SigningKeyPair, id: bytes, hd: bytes | np.ndarray, pk: bytes) -> DeviceCertificate:
    hd = _as_hd_bytes(hd)
    sig = ed_sign(ttp, cert_preimage(CertKind.DEVICE, id, pk, hd))
    return DeviceCertificate(id, hd, pk, sig)


def issue_server_cert(ttp: SigningKeyPair, id: bytes, pk: bytes) -> ServerCertificate:
    sig = ed_sign(ttp, cert_preimage(CertKind.SERVER, id, pk))
    return ServerCertificate(id, pk, sig)


def assemble_device_cert(id: bytes, hd: bytes | np.ndarray, pk: bytes, sig: bytes) -> DeviceCertificate:
    """Rebuild a certificate from the device's own fields plus the TTP's signature."""
    return DeviceCertificate(id, _as_hd_bytes(hd), pk, sig)


def verify_cert(cert: Certificate | bytes, pk_ttp: bytes) -> bool:
    if isinstance(cert, (bytes, bytearray)):
        cert = decode_cert(bytes(cert))
    return ed_verify(pk_ttp, cert.preimage(), cert.sig)


def encode_cert(cert: Certificate) -> bytes:
    records = {Tag.ID: cert.id, Tag.PK: cert.pk, Tag.SIG: cert.sig, Tag.KIND: bytes([cert.kind])}
    if isinstance(cert, DeviceCertificate):
        records[Tag.HD] = cert.hd
    return encode_tlv(records)


def decode_cert(data: bytes) -> Certificate:
    try:
        rec = decode_tlv(data, set(Tag))
    except MalformedTlv as exc:
        raise MalformedCertificate(str(exc)) from exc
    missing = {Tag.ID, Tag.PK, Tag.SIG, Tag.KIND} - rec.keys()
    if missing:
        raise MalformedCertificate(f"missing fields: {sorted(t.name for t in missing)}")
    if len(rec[Tag.ID]) != ID_BYTES or len(rec[Tag.PK]) != KEY_BYTES or len(rec[Tag.SIG]) != SIGNATURE_SIZE:
        raise MalformedCertificate("field has wrong length")
    kind = rec[Tag.KIND]
    if kind == bytes([CertKind.DEVICE]):
        if Tag.HD not in rec:
            raise MalformedCertificate("device certificate without helper data")
        return DeviceCertificate(rec[Tag.ID], rec[Tag.HD], rec[Tag.PK], rec[Tag.SIG])
    if kind == bytes([CertKind.SERVER]):
        if Tag.HD in rec:
            raise MalformedCertificate("server certificate carries helper data")
        return ServerCertificate(rec[Tag.ID], rec[Tag.PK], rec[Tag.SIG])
    raise MalformedCertificate(f"unknown certificate kind {kind.hex()}")
