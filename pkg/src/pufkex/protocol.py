"""PUF-rooted ECDH enrollment and key agreement, variants A to D.

Roles are the trusted third party (:class:`Ttp`), the constrained
:class:`Device` and the :class:`Server`. Stage I enrolls parties with the TTP;
Stage II agrees on a session key ``k = KDF(w)`` and confirms it with a MAC
challenge-response.

    variant  server auth  cloud  device NVM        server DH key
    A        yes          yes    PK_TTP            static (certified)
    B        yes          no     Cert_ID, PK_TTP   static (certified)
    C        no           yes    nothing           ephemeral
    D        no           no     Cert_ID           ephemeral

Every message is a frame ``length | type | TLV``. Endpoints are small state
machines fed one frame at a time; :func:`run_session` pumps frames between
them through a :class:`~pufkex.transport.Channel`.
"""

from __future__ import annotations

import hmac as _hmac
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from . import fuzzy
from .curve25519 import (
    AgreementKeyPair,
    LowOrderResult,
    SigningKeyPair,
    x25519,
    x25519_base,
    xeddsa_sign,
    xeddsa_verify,
)
from .identity import (
    ID_BYTES,
    KEY_BYTES,
    DeviceCertificate,
    MalformedCertificate,
    ServerCertificate,
    assemble_device_cert,
    decode_cert,
    encode_cert,
    issue_device_cert,
    issue_server_cert,
    verify_cert,
)
from .puf import NoiseModel, PufDevice, extract_entropy_seed, readout
from .registry import NotFound, Revoked
from .symmetric import Drbg, hkdf, hmac, sha256
from .transport import Channel, TransferRecord
from .wire import MalformedFrame, MalformedTlv, decode_tlv, encode_tlv, frame, unframe

log = logging.getLogger(__name__)

NONCE_BYTES = 16
KDF_INFO = b"pufkex-v1"
DEVICE_LABEL = b"dev-confirm"
SERVER_LABEL = b"srv-confirm"
EPHEMERAL_LABEL = b"pufkex-eph"


class Variant(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"

    @property
    def mutual(self) -> bool:
        return self in (Variant.A, Variant.B)

    @property
    def uses_cloud(self) -> bool:
        return self in (Variant.A, Variant.C)

    @property
    def cert_on_device(self) -> bool:
        return self in (Variant.B, Variant.D)

    @property
    def ephemeral(self) -> bool:
        return not self.mutual


class MsgType(IntEnum):
    ENROLL_REQ = 0x10
    ENROLL_RESP = 0x11
    SESSION_REQ = 0x20
    CERT_PUSH = 0x21
    EPHEMERAL_PK = 0x22
    HS_CHALLENGE = 0x30
    HS_RESPONSE = 0x31
    HS_CONFIRM = 0x32


class Field(IntEnum):
    ID = 0x01
    HD = 0x02
    PK = 0x03
    SIG = 0x04
    PK_TTP = 0x05
    CERT = 0x06
    NONCE = 0x07
    TAG = 0x08
    EPH_PK = 0x09
    EPH_SIG = 0x0A


_ALLOWED = {
    MsgType.ENROLL_REQ: {Field.ID, Field.HD, Field.PK},
    MsgType.ENROLL_RESP: {Field.SIG, Field.PK_TTP, Field.CERT},
    MsgType.SESSION_REQ: {Field.ID, Field.HD, Field.CERT, Field.EPH_PK, Field.EPH_SIG},
    MsgType.CERT_PUSH: {Field.CERT},
    MsgType.EPHEMERAL_PK: {Field.PK},
    MsgType.HS_CHALLENGE: {Field.NONCE},
    MsgType.HS_RESPONSE: {Field.NONCE, Field.TAG},
    MsgType.HS_CONFIRM: {Field.TAG},
}

# messages bound into the KDF transcript; handshake messages are MAC-protected instead
_TRANSCRIPT_TYPES = {MsgType.SESSION_REQ, MsgType.CERT_PUSH, MsgType.EPHEMERAL_PK}


class AbortReason(str, Enum):
    CERT_INVALID = "CertInvalid"
    CERT_REVOKED = "CertRevoked"
    CERT_NOT_FOUND = "CertNotFound"
    HANDSHAKE_MAC_MISMATCH = "HandshakeMacMismatch"
    LOW_ORDER_RESULT = "LowOrderResult"
    RECONSTRUCT_FAILED = "ReconstructFailed"
    MALFORMED_MESSAGE = "MalformedMessage"
    UNEXPECTED_MESSAGE = "UnexpectedMessage"


class ProtocolAbort(Exception):
    def __init__(self, reason: AbortReason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason
        self.detail = detail


class VariantMismatch(ValueError):
    pass


class EnrollmentFailed(RuntimeError):
    pass


class Phase(str, Enum):
    ACTIVE = "active"
    RESPONDED = "responded"  # one-way handshake answered; device cannot authenticate the server
    CONFIRMED = "confirmed"
    ABORTED = "aborted"


@dataclass(frozen=True)
class ProtocolMessage:
    msg_type: MsgType
    fields: dict[int, bytes]

    def encode(self) -> bytes:
        return frame(bytes([self.msg_type]) + encode_tlv(self.fields))

    @classmethod
    def decode(cls, data: bytes) -> "ProtocolMessage":
        try:
            body = unframe(data)
            if not body:
                raise MalformedFrame("empty frame")
            msg_type = MsgType(body[0])
            fields = decode_tlv(body[1:], _ALLOWED[msg_type])
        except (MalformedFrame, MalformedTlv, ValueError) as exc:
            raise ProtocolAbort(AbortReason.MALFORMED_MESSAGE, str(exc)) from exc
        return cls(msg_type, fields)

    def require(self, name: Field, size: int | None = None) -> bytes:
        value = self.fields.get(name)
        if value is None:
            raise ProtocolAbort(AbortReason.MALFORMED_MESSAGE, f"{self.msg_type.name} lacks {name.name}")
        if size is not None and len(value) != size:
            raise ProtocolAbort(AbortReason.MALFORMED_MESSAGE, f"{name.name} must be {size} bytes")
        return value


def message(msg_type: MsgType, **fields: bytes) -> bytes:
    return ProtocolMessage(msg_type, {Field[k.upper()]: v for k, v in fields.items()}).encode()


# -- key derivation and confirmation ---------------------------------------


def derive_session_key(w: bytes, variant: Variant, transcript: bytes) -> bytes:
    """k = HKDF(salt=SHA-256(transcript), ikm=w, info="pufkex-v1" | variant)."""
    if w == bytes(len(w)):
        raise LowOrderResult("shared secret is all zero")
    return hkdf(sha256(transcript), w, KDF_INFO + Variant(variant).value.encode(), 32)


def device_tag(k: bytes, server_nonce: bytes) -> bytes:
    return hmac(k, DEVICE_LABEL + server_nonce)


def server_tag(k: bytes, device_nonce: bytes, server_nonce: bytes) -> bytes:
    return hmac(k, SERVER_LABEL + device_nonce + server_nonce)


def handshake(server_key: bytes, device_key: bytes, mutual: bool, rng: Drbg) -> None:
    """Run the confirmation exchange between two in-memory parties.

    The server challenges; with ``mutual`` the device adds its own nonce and
    the server answers it. Raises ``ProtocolAbort(HANDSHAKE_MAC_MISMATCH)``.
    """
    n_s = rng.read(NONCE_BYTES)
    n_d = rng.read(NONCE_BYTES) if mutual else b""
    if not _hmac.compare_digest(device_tag(server_key, n_s), device_tag(device_key, n_s)):
        raise ProtocolAbort(AbortReason.HANDSHAKE_MAC_MISMATCH, "device response rejected by server")
    if mutual and not _hmac.compare_digest(server_tag(device_key, n_d, n_s), server_tag(server_key, n_d, n_s)):
        raise ProtocolAbort(AbortReason.HANDSHAKE_MAC_MISMATCH, "server confirmation rejected by device")


def _ephemeral_statement(device_id: bytes, eph_pk: bytes) -> bytes:
    return EPHEMERAL_LABEL + device_id + eph_pk


# -- roles -----------------------------------------------------------------


class Ttp:
    """Trusted third party: signs certificates, optionally files them in the cloud."""

    def __init__(self, keypair: SigningKeyPair, registry=None):
        self.keypair = keypair
        self.registry = registry

    @property
    def public(self) -> bytes:
        return self.keypair.public

    def handle_device_enrollment(self, variant: Variant, request: bytes) -> tuple[DeviceCertificate, bytes | None]:
        msg = ProtocolMessage.decode(request)
        if msg.msg_type is not MsgType.ENROLL_REQ:
            raise EnrollmentFailed(f"expected ENROLL_REQ, got {msg.msg_type.name}")
        cert = issue_device_cert(
            self.keypair, msg.require(Field.ID, ID_BYTES), msg.require(Field.HD), msg.require(Field.PK, KEY_BYTES)
        )
        if variant.uses_cloud:
            if self.registry is None:
                raise EnrollmentFailed(f"variant {variant.value} needs a registry")
            self.registry.put(cert)
        reply = {
            Variant.A: lambda: message(MsgType.ENROLL_RESP, pk_ttp=self.public),
            Variant.B: lambda: message(MsgType.ENROLL_RESP, sig=cert.sig, pk_ttp=self.public),
            Variant.C: lambda: None,
            Variant.D: lambda: message(MsgType.ENROLL_RESP, sig=cert.sig),
        }[variant]()
        return cert, reply

    def handle_server_enrollment(self, request: bytes) -> tuple[ServerCertificate, bytes]:
        msg = ProtocolMessage.decode(request)
        if msg.msg_type is not MsgType.ENROLL_REQ:
            raise EnrollmentFailed(f"expected ENROLL_REQ, got {msg.msg_type.name}")
        cert = issue_server_cert(self.keypair, msg.require(Field.ID, ID_BYTES), msg.require(Field.PK, KEY_BYTES))
        return cert, message(MsgType.ENROLL_RESP, cert=encode_cert(cert), pk_ttp=self.public)


@dataclass
class DeviceNvm:
    """What the device keeps in non-volatile memory between power cycles."""

    pk_ttp: bytes | None = None
    cert: DeviceCertificate | None = None

    def bits(self) -> int:
        total = 0
        if self.pk_ttp is not None:
            total += 8 * len(self.pk_ttp)
        if self.cert is not None:
            total += 8 * len(encode_cert(self.cert))
        return total


class Device:
    """Constrained device holding an SRAM-PUF; the DH secret is never stored.

    With ``implicit_rejection`` (default) a failed PUF reconstruction is not
    announced: the device continues with a pseudorandom key, so the failure
    surfaces to the server as a handshake mismatch like any wrong key does.
    """

    role = "device"

    def __init__(
        self,
        id: bytes,
        puf: PufDevice,
        noise: NoiseModel = NoiseModel(),
        params: fuzzy.CodeParams = fuzzy.DEFAULT_PARAMS,
        rng_seed: bytes | None = None,
        implicit_rejection: bool = True,
    ):
        if len(id) != ID_BYTES:
            raise ValueError("device IDs are 6 bytes")
        self.id = id
        self.puf = puf
        self.noise = noise
        self.params = params
        self.implicit_rejection = implicit_rejection
        self.nvm = DeviceNvm()
        self.variant: Variant | None = None
        self.reconstruct_failures = 0
        self._readouts = 0
        self._pending: tuple[np.ndarray, bytes] | None = None
        if rng_seed is None:
            rng_seed = extract_entropy_seed(puf, noise.derive(0))
        self.rng = Drbg(rng_seed)

    def enrollment_request(self, variant: Variant, secret: bytes | None = None) -> bytes:
        if self.variant is not None:
            raise EnrollmentFailed("device already enrolled")
        if secret is None:
            secret = self.rng.read(fuzzy.SECRET_BYTES)
        try:
            hd = fuzzy.enroll(self.puf.reference, secret, self.params)
        except fuzzy.SizeMismatch as exc:
            raise EnrollmentFailed(str(exc)) from exc
        pk = x25519_base(secret)
        self._pending = (hd, pk)
        self._enrolling = Variant(variant)
        return message(MsgType.ENROLL_REQ, id=self.id, hd=fuzzy.pack_bits(hd), pk=pk)

    def finish_enrollment(self, response: bytes | None) -> None:
        if self._pending is None:
            raise EnrollmentFailed("no enrollment in progress")
        variant = self._enrolling
        hd, pk = self._pending
        if variant is Variant.C:
            if response is not None:
                raise EnrollmentFailed("variant C expects no enrollment response")
        else:
            if response is None:
                raise EnrollmentFailed("missing enrollment response")
            msg = ProtocolMessage.decode(response)
            if msg.msg_type is not MsgType.ENROLL_RESP:
                raise EnrollmentFailed(f"expected ENROLL_RESP, got {msg.msg_type.name}")
            if variant.mutual:
                self.nvm.pk_ttp = msg.require(Field.PK_TTP, KEY_BYTES)
            if variant.cert_on_device:
                self.nvm.cert = assemble_device_cert(self.id, hd, pk, msg.require(Field.SIG))
        self._pending = None
        self.variant = variant

    def next_readout(self) -> np.ndarray:
        self._readouts += 1
        return readout(self.puf, self.noise.derive(1).derive(self._readouts))

    def recover_secret(self, hd_bytes: bytes) -> bytes:
        """PUF-reconstruct: fresh readout, decode against helper data."""
        try:
            hd = fuzzy.unpack_bits(hd_bytes)
            return fuzzy.reconstruct(self.next_readout(), hd, self.params)
        except (fuzzy.ReconstructFailed, fuzzy.SizeMismatch) as exc:
            self.reconstruct_failures += 1
            if not self.implicit_rejection:
                raise ProtocolAbort(AbortReason.RECONSTRUCT_FAILED, str(exc)) from exc
            log.debug("reconstruction failed, continuing with a pseudorandom key: %s", exc)
            return self.rng.read(fuzzy.SECRET_BYTES)

    def session(self) -> "DeviceSession":
        if self.variant is None:
            raise EnrollmentFailed("device is not enrolled")
        return DeviceSession(self)


class Server:
    role = "server"

    def __init__(self, id: bytes, rng_seed: bytes, registry=None, ephemeral_upgrade: bool = False):
        self.id = id
        self.rng = Drbg(rng_seed)
        self.registry = registry
        self.ephemeral_upgrade = ephemeral_upgrade
        self.keypair: AgreementKeyPair | None = None
        self.cert: ServerCertificate | None = None
        self.pk_ttp: bytes | None = None

    def trust(self, pk_ttp: bytes) -> None:
        """Provision the TTP key out of band (variants C and D skip server enrollment)."""
        self.pk_ttp = pk_ttp

    def enrollment_request(self) -> bytes:
        self.keypair = AgreementKeyPair.generate(self.rng.read)
        return message(MsgType.ENROLL_REQ, id=self.id, pk=self.keypair.public)

    def finish_enrollment(self, response: bytes) -> None:
        msg = ProtocolMessage.decode(response)
        try:
            cert = decode_cert(msg.require(Field.CERT))
        except MalformedCertificate as exc:
            raise EnrollmentFailed(str(exc)) from exc
        pk_ttp = msg.require(Field.PK_TTP, KEY_BYTES)
        if not isinstance(cert, ServerCertificate) or cert.pk != self.keypair.public:
            raise EnrollmentFailed("TTP returned a certificate for a different key")
        if not verify_cert(cert, pk_ttp):
            raise EnrollmentFailed("server certificate does not verify")
        self.cert = cert
        self.pk_ttp = pk_ttp

    def session(self, variant: Variant, device_id: bytes) -> "ServerSession":
        variant = Variant(variant)
        if variant.mutual and self.cert is None:
            raise VariantMismatch(f"variant {variant.value} needs an enrolled server")
        if variant.uses_cloud and self.registry is None:
            raise VariantMismatch(f"variant {variant.value} needs a registry")
        if self.pk_ttp is None:
            raise VariantMismatch("server has no TTP public key")
        return ServerSession(self, variant, device_id)


# -- session endpoints ------------------------------------------------------


class _Endpoint:
    """Shared bookkeeping: expected-message queue, transcript, abort latch."""

    name = ""

    def __init__(self, variant: Variant, expect: list[MsgType]):
        self.variant = variant
        self.expect = deque(expect)
        self.transcript = bytearray()
        self.phase = Phase.ACTIVE
        self.abort_reason: AbortReason | None = None
        self.abort_detail = ""
        self.key: bytes | None = None
        self.shared_secret: bytes | None = None

    def receive(self, data: bytes) -> list[bytes]:
        if self.phase is Phase.ABORTED or not self.expect:
            return []
        try:
            msg = ProtocolMessage.decode(data)
            if not self.expect or msg.msg_type is not self.expect[0]:
                want = self.expect[0].name if self.expect else "nothing"
                raise ProtocolAbort(AbortReason.UNEXPECTED_MESSAGE, f"got {msg.msg_type.name}, want {want}")
            self.expect.popleft()
            if msg.msg_type in _TRANSCRIPT_TYPES:
                self.transcript += data
            return self._handle(msg)
        except ProtocolAbort as exc:
            self._abort(exc)
            return []

    def _abort(self, exc: ProtocolAbort) -> None:
        log.debug("%s aborts: %s", self.name, exc)
        self.phase = Phase.ABORTED
        self.abort_reason = exc.reason
        self.abort_detail = exc.detail
        self.expect.clear()

    def _send(self, data: bytes) -> bytes:
        if data[4] in _TRANSCRIPT_TYPES:
            self.transcript += data
        return data

    def _agree(self, secret: bytes, peer_public: bytes) -> None:
        try:
            self.shared_secret = x25519(secret, peer_public)
        except LowOrderResult as exc:
            raise ProtocolAbort(AbortReason.LOW_ORDER_RESULT, str(exc)) from exc
        self.key = derive_session_key(self.shared_secret, self.variant, bytes(self.transcript))

    def _handle(self, msg: ProtocolMessage) -> list[bytes]:
        raise NotImplementedError


def _decode_peer_cert(data: bytes, kind: type) -> DeviceCertificate | ServerCertificate:
    try:
        cert = decode_cert(data)
    except MalformedCertificate as exc:
        raise ProtocolAbort(AbortReason.CERT_INVALID, str(exc)) from exc
    if not isinstance(cert, kind):
        raise ProtocolAbort(AbortReason.CERT_INVALID, f"expected a {kind.__name__}")
    return cert


class DeviceSession(_Endpoint):
    name = "device"

    def __init__(self, device: Device):
        variant = device.variant
        if variant.mutual:
            expect = [MsgType.SESSION_REQ, MsgType.HS_CHALLENGE, MsgType.HS_CONFIRM]
        else:
            expect = [MsgType.SESSION_REQ, MsgType.EPHEMERAL_PK, MsgType.HS_CHALLENGE]
        super().__init__(variant, expect)
        self.device = device
        self.secret: bytes | None = None
        self.server_nonce = b""
        self.device_nonce = b""

    def _handle(self, msg: ProtocolMessage) -> list[bytes]:
        handler = {
            MsgType.SESSION_REQ: self._on_request,
            MsgType.EPHEMERAL_PK: self._on_ephemeral,
            MsgType.HS_CHALLENGE: self._on_challenge,
            MsgType.HS_CONFIRM: self._on_confirm,
        }[msg.msg_type]
        return handler(msg)

    def _on_request(self, msg: ProtocolMessage) -> list[bytes]:
        dev = self.device
        if msg.require(Field.ID, ID_BYTES) != dev.id:
            raise ProtocolAbort(AbortReason.UNEXPECTED_MESSAGE, "session request addressed to another device")
        out = []
        peer_pk = None
        if self.variant.mutual:
            cert = _decode_peer_cert(msg.require(Field.CERT), ServerCertificate)
            if not verify_cert(cert, dev.nvm.pk_ttp):
                raise ProtocolAbort(AbortReason.CERT_INVALID, "server certificate rejected")
            peer_pk = cert.pk
            if Field.EPH_PK in msg.fields:
                eph_pk = msg.require(Field.EPH_PK, KEY_BYTES)
                if not xeddsa_verify(cert.pk, _ephemeral_statement(dev.id, eph_pk), msg.require(Field.EPH_SIG)):
                    raise ProtocolAbort(AbortReason.CERT_INVALID, "ephemeral key signature rejected")
                peer_pk = eph_pk
        if self.variant.cert_on_device:
            hd = dev.nvm.cert.hd
            out.append(self._send(message(MsgType.CERT_PUSH, cert=encode_cert(dev.nvm.cert))))
        else:
            hd = msg.require(Field.HD)
        self.secret = dev.recover_secret(hd)
        if peer_pk is not None:
            self._agree(self.secret, peer_pk)
        return out

    def _on_ephemeral(self, msg: ProtocolMessage) -> list[bytes]:
        self._agree(self.secret, msg.require(Field.PK, KEY_BYTES))
        return []

    def _on_challenge(self, msg: ProtocolMessage) -> list[bytes]:
        self.server_nonce = msg.require(Field.NONCE, NONCE_BYTES)
        tag = device_tag(self.key, self.server_nonce)
        if self.variant.mutual:
            self.device_nonce = self.device.rng.read(NONCE_BYTES)
            return [self._send(message(MsgType.HS_RESPONSE, nonce=self.device_nonce, tag=tag))]
        self.phase = Phase.RESPONDED
        return [self._send(message(MsgType.HS_RESPONSE, tag=tag))]

    def _on_confirm(self, msg: ProtocolMessage) -> list[bytes]:
        expected = server_tag(self.key, self.device_nonce, self.server_nonce)
        if not _hmac.compare_digest(expected, msg.require(Field.TAG, 32)):
            raise ProtocolAbort(AbortReason.HANDSHAKE_MAC_MISMATCH, "server confirmation rejected")
        self.phase = Phase.CONFIRMED
        return []


class ServerSession(_Endpoint):
    name = "server"

    def __init__(self, server: Server, variant: Variant, device_id: bytes):
        expect = ([MsgType.CERT_PUSH] if variant.cert_on_device else []) + [MsgType.HS_RESPONSE]
        super().__init__(variant, expect)
        self.server = server
        self.device_id = device_id
        self.server_nonce = b""
        self.ephemeral: AgreementKeyPair | None = None

    def start(self) -> list[bytes]:
        try:
            return self._start()
        except ProtocolAbort as exc:
            self._abort(exc)
            return []

    def _fetch_device_cert(self) -> DeviceCertificate:
        try:
            record = self.server.registry.get(self.device_id)
        except NotFound as exc:
            raise ProtocolAbort(AbortReason.CERT_NOT_FOUND, str(exc)) from exc
        except Revoked as exc:
            raise ProtocolAbort(AbortReason.CERT_REVOKED, str(exc)) from exc
        return self._check_device_cert(record.cert_bytes)

    def _check_device_cert(self, data: bytes) -> DeviceCertificate:
        cert = _decode_peer_cert(data, DeviceCertificate)
        if cert.id != self.device_id:
            raise ProtocolAbort(AbortReason.CERT_INVALID, "certificate names another device")
        if not verify_cert(cert, self.server.pk_ttp):
            raise ProtocolAbort(AbortReason.CERT_INVALID, "device certificate rejected")
        return cert

    def _start(self) -> list[bytes]:
        srv = self.server
        fields = {"id": self.device_id}
        device_cert = None
        if self.variant.uses_cloud:
            device_cert = self._fetch_device_cert()
            fields["hd"] = device_cert.hd
        if self.variant.mutual:
            fields["cert"] = encode_cert(srv.cert)
            if srv.ephemeral_upgrade:
                self.ephemeral = AgreementKeyPair.generate(srv.rng.read)
                fields["eph_pk"] = self.ephemeral.public
                fields["eph_sig"] = xeddsa_sign(
                    srv.keypair.secret, _ephemeral_statement(self.device_id, self.ephemeral.public), srv.rng.read(64)
                )
        out = [self._send(message(MsgType.SESSION_REQ, **fields))]
        if device_cert is not None:
            out += self._agree_and_challenge(device_cert)
        return out

    def _agree_and_challenge(self, device_cert: DeviceCertificate) -> list[bytes]:
        out = []
        if self.variant.ephemeral:
            self.ephemeral = AgreementKeyPair.generate(self.server.rng.read)
            out.append(self._send(message(MsgType.EPHEMERAL_PK, pk=self.ephemeral.public)))
        secret = self.ephemeral.secret if self.ephemeral is not None else self.server.keypair.secret
        self._agree(secret, device_cert.pk)
        self.server_nonce = self.server.rng.read(NONCE_BYTES)
        out.append(self._send(message(MsgType.HS_CHALLENGE, nonce=self.server_nonce)))
        return out

    def _handle(self, msg: ProtocolMessage) -> list[bytes]:
        if msg.msg_type is MsgType.CERT_PUSH:
            return self._agree_and_challenge(self._check_device_cert(msg.require(Field.CERT)))
        tag = msg.require(Field.TAG, 32)
        if not _hmac.compare_digest(device_tag(self.key, self.server_nonce), tag):
            raise ProtocolAbort(AbortReason.HANDSHAKE_MAC_MISMATCH, "device response rejected")
        self.phase = Phase.CONFIRMED
        if self.variant.mutual:
            device_nonce = msg.require(Field.NONCE, NONCE_BYTES)
            return [self._send(message(MsgType.HS_CONFIRM, tag=server_tag(self.key, device_nonce, self.server_nonce)))]
        return []


# -- drivers -----------------------------------------------------------------


def enroll_device(
    variant: Variant, ttp: Ttp, device: Device, channel: Channel | None = None, secret: bytes | None = None
) -> DeviceCertificate:
    """Stage I for the device; the TTP reply (if any) goes back over ``channel``."""
    variant = Variant(variant)
    channel = channel or Channel()
    cert = None
    request = device.enrollment_request(variant, secret)
    for delivered in channel.send("I", "device", "ttp", request):
        cert, reply = ttp.handle_device_enrollment(variant, delivered)
        responses = channel.send("I", "ttp", "device", reply) if reply is not None else [None]
        for resp in responses:
            device.finish_enrollment(resp)
    if cert is None or device.variant is None:
        raise EnrollmentFailed("enrollment request never reached the TTP")
    return cert


def enroll_server(variant: Variant, ttp: Ttp, server: Server, channel: Channel | None = None) -> ServerCertificate:
    variant = Variant(variant)
    if not variant.mutual:
        raise VariantMismatch(f"variant {variant.value} does not enroll the server")
    channel = channel or Channel()
    cert = None
    for delivered in channel.send("I", "server", "ttp", server.enrollment_request()):
        cert, reply = ttp.handle_server_enrollment(delivered)
        for resp in channel.send("I", "ttp", "server", reply):
            server.finish_enrollment(resp)
    if cert is None or server.cert is None:
        raise EnrollmentFailed("server enrollment did not complete")
    return cert


@dataclass
class SessionResult:
    variant: Variant
    server: ServerSession
    device: DeviceSession
    channel: Channel
    abort_reason: AbortReason | None = None
    aborted_by: str | None = None

    @property
    def server_key(self) -> bytes | None:
        return self.server.key

    @property
    def device_key(self) -> bytes | None:
        return self.device.key

    @property
    def confirmed(self) -> bool:
        """Every authenticating check passed on both ends."""
        if self.server.phase is not Phase.CONFIRMED:
            return False
        if self.variant.mutual:
            return self.device.phase is Phase.CONFIRMED
        return self.device.phase is Phase.RESPONDED

    @property
    def keys_match(self) -> bool:
        return self.server_key is not None and self.server_key == self.device_key

    @property
    def log(self) -> list[TransferRecord]:
        return [r for r in self.channel.log if r.stage == "II"]

    @property
    def transcript(self) -> list[bytes]:
        return self.channel.frames("II")


def run_session(variant: Variant, server: Server, device: Device, channel: Channel | None = None) -> SessionResult:
    """Stage II between ``server`` and ``device``; never raises on protocol failure."""
    variant = Variant(variant)
    if device.variant is not variant:
        raise VariantMismatch(f"device enrolled for {device.variant}, session requested for {variant.value}")
    channel = channel or Channel()
    srv = server.session(variant, device.id)
    dev = device.session()
    result = SessionResult(variant, srv, dev, channel)
    ends = {"server": srv, "device": dev}
    peer = {"server": "device", "device": "server"}

    def note_aborts():
        if result.abort_reason is None:
            for name, end in ends.items():
                if end.phase is Phase.ABORTED:
                    result.abort_reason, result.aborted_by = end.abort_reason, name

    queue = deque(("server", f) for f in srv.start())
    note_aborts()
    while queue:
        sender, data = queue.popleft()
        receiver = peer[sender]
        for delivered in channel.send("II", sender, receiver, data):
            queue.extend((receiver, f) for f in ends[receiver].receive(delivered))
            note_aborts()
    return result
