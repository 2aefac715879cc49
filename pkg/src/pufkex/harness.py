"""Scripted protocol runs under passive and active adversaries.

A :class:`Scenario` fixes the variant, seeds and attack; :func:`run_scenario`
builds a fresh deployment (TTP, registry, server, device), enrolls it and
runs one Stage II session through an intercepting channel. The result is an
:class:`Outcome` value, never an exception, so callers decide what a
detected attack means.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .curve25519 import AgreementKeyPair, SigningKeyPair, clamp_scalar
from .identity import DeviceCertificate, decode_cert, encode_cert
from .protocol import (
    AbortReason,
    Device,
    Field,
    MsgType,
    ProtocolAbort,
    ProtocolMessage,
    Server,
    SessionResult,
    Ttp,
    Variant,
    enroll_device,
    enroll_server,
    run_session,
)
from .puf import NoiseModel, new_device
from .registry import Registry, RegistryRecord
from .symmetric import Drbg, sha256
from .transport import Channel, Hop, TransferRecord

SCENARIOS = ("honest", "eavesdrop", "tamper", "replay", "mitm", "fake-device", "tamper-cert")


def derive_seed(seed: int, label: str) -> bytes:
    return sha256(label.encode() + b"\x00" + seed.to_bytes(16, "big", signed=True))


def derive_int(seed: int, label: str, bits: int = 64) -> int:
    return int.from_bytes(derive_seed(seed, label), "big") >> (256 - bits)


@dataclass
class World:
    variant: Variant
    ttp: Ttp
    registry: Registry | None
    server: Server
    device: Device
    device_cert: DeviceCertificate
    enrollment: Channel


def build_world(
    variant: Variant | str,
    seed: int = 0,
    noise: float = 0.15,
    device_seed: int | None = None,
    ephemeral_upgrade: bool = False,
    registry=None,
    ttp_keypair: SigningKeyPair | None = None,
    secret: bytes | None = None,
) -> World:
    """Enroll a deployment for ``variant``; every random choice comes from ``seed``."""
    variant = Variant(variant)
    ttp_keypair = ttp_keypair or SigningKeyPair.from_seed(derive_seed(seed, "ttp"))
    if registry is None and variant.uses_cloud:
        registry = Registry(ttp_keypair.public)
    ttp = Ttp(ttp_keypair, registry if variant.uses_cloud else None)
    if device_seed is None:
        device_seed = derive_int(seed, "puf")
    noise_model = NoiseModel(noise, derive_int(seed, "noise"))
    device = Device(
        derive_seed(seed, "device-id")[:6],
        new_device(device_seed),
        noise_model,
        rng_seed=None if noise > 0 else derive_seed(seed, "device-rng"),
    )
    server = Server(
        derive_seed(seed, "server-id")[:6],
        derive_seed(seed, "server-rng"),
        registry=registry if variant.uses_cloud else None,
        ephemeral_upgrade=ephemeral_upgrade,
    )
    channel = Channel()
    cert = enroll_device(variant, ttp, device, channel, secret=secret)
    if variant.mutual:
        enroll_server(variant, ttp, server, channel)
    else:
        server.trust(ttp.public)
    return World(variant, ttp, registry, server, device, cert, channel)


@dataclass(frozen=True)
class Scenario:
    name: str
    variant: Variant
    seed: int = 0
    noise: float = 0.15
    tamper_index: int | None = None
    tamper_bit: int | None = None
    ephemeral_upgrade: bool = False
    leak_key: bool = False  # positive control for the eavesdrop audit

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}; choose from {', '.join(SCENARIOS)}")
        object.__setattr__(self, "variant", Variant(self.variant))


@dataclass
class Outcome:
    scenario: Scenario
    confirmed: bool
    keys_match: bool
    abort_reason: AbortReason | None
    aborted_by: str | None
    transcript: list[bytes]
    transfer_log: list[TransferRecord]
    secrets: dict[str, bytes] = field(repr=False, default_factory=dict)
    enrollment_frames: list[bytes] = field(repr=False, default_factory=list)

    @property
    def detected(self) -> bool:
        return not self.confirmed

    def report_lines(self) -> list[str]:
        s = self.scenario
        lines = [
            f"scenario={s.name}",
            f"variant={s.variant.value}",
            f"seed={s.seed:x}",
            f"confirmed={str(self.confirmed).lower()}",
            f"keys_match={str(self.keys_match).lower()}",
            f"abort_reason={self.abort_reason.value if self.abort_reason else 'none'}",
            f"aborted_by={self.aborted_by or 'none'}",
            f"stage2_messages={len(self.transcript)}",
        ]
        if s.name == "eavesdrop":
            lines.append(f"eavesdrop_audit={'pass' if eavesdrop_audit(self) else 'fail'}")
        return lines


# -- interceptors -------------------------------------------------------------


def bit_flipper(index: int, bit: int):
    """Flip one bit of the ``index``-th Stage II frame."""

    def intercept(hop: Hop, frame: bytes) -> list[bytes]:
        if hop.stage != "II" or hop.index != index:
            return [frame]
        pos = bit % (8 * len(frame))
        data = bytearray(frame)
        data[pos // 8] ^= 0x80 >> (pos % 8)
        return [bytes(data)]

    return intercept


def replayer(recorded: list[bytes]):
    """Substitute each Stage II frame with the same-position frame of an earlier session."""

    def intercept(hop: Hop, frame: bytes) -> list[bytes]:
        if hop.stage != "II":
            return [frame]
        return [recorded[hop.index]] if hop.index < len(recorded) else []

    return intercept


def key_substituter(attacker: AgreementKeyPair):
    """Relay everything, swapping every public DH value in flight for the attacker's."""

    def swap_cert(data: bytes) -> bytes:
        cert = decode_cert(data)
        return encode_cert(dataclasses.replace(cert, pk=attacker.public))

    def intercept(hop: Hop, frame: bytes) -> list[bytes]:
        if hop.stage != "II":
            return [frame]
        try:
            msg = ProtocolMessage.decode(frame)
        except ProtocolAbort:
            return [frame]
        fields = dict(msg.fields)
        if msg.msg_type is MsgType.EPHEMERAL_PK:
            fields[Field.PK] = attacker.public
        if Field.EPH_PK in fields:
            fields[Field.EPH_PK] = attacker.public
        if Field.CERT in fields and msg.msg_type in (MsgType.SESSION_REQ, MsgType.CERT_PUSH):
            fields[Field.CERT] = swap_cert(fields[Field.CERT])
        return [ProtocolMessage(msg.msg_type, fields).encode()]

    return intercept


# -- scenario runner ------------------------------------------------------------


def _flip_bit(data: bytes, pos: int) -> bytes:
    out = bytearray(data)
    out[pos // 8] ^= 0x80 >> (pos % 8)
    return bytes(out)


def _tamper_stored_cert(world: World, seed: int) -> None:
    cert = world.device_cert
    pos = derive_int(seed, "cert-bit", 32) % (8 * len(cert.pk))
    bad = dataclasses.replace(cert, pk=_flip_bit(cert.pk, pos))
    if world.variant.uses_cloud:
        # storage-level corruption; Registry.put would refuse the bad certificate
        world.registry._records[cert.id] = RegistryRecord(cert.id, encode_cert(bad))
    else:
        world.device.nvm.cert = bad


def _collect_secrets(result: SessionResult) -> dict[str, bytes]:
    found = {
        "server_key": result.server.key,
        "device_key": result.device.key,
        "server_shared": result.server.shared_secret,
        "device_shared": result.device.shared_secret,
        "device_secret": result.device.secret,
    }
    if result.device.secret is not None:
        found["device_secret_clamped"] = clamp_scalar(result.device.secret)
    return {k: v for k, v in found.items() if v is not None}


def run_scenario(s: Scenario) -> Outcome:
    world = build_world(s.variant, s.seed, s.noise, ephemeral_upgrade=s.ephemeral_upgrade)
    channel = Channel()
    if s.name == "tamper":
        count = len(expected_stage2(s.variant))
        index = s.tamper_index if s.tamper_index is not None else derive_int(s.seed, "tamper-index") % count
        bit = s.tamper_bit if s.tamper_bit is not None else derive_int(s.seed, "tamper-bit", 32)
        channel = Channel(bit_flipper(index, bit))
    elif s.name == "replay":
        earlier = run_session(s.variant, world.server, world.device)
        channel = Channel(replayer(earlier.transcript))
    elif s.name == "mitm":
        attacker = AgreementKeyPair.generate(Drbg(derive_seed(s.seed, "attacker")).read)
        channel = Channel(key_substituter(attacker))
    elif s.name == "fake-device":
        # same NVM and ID, different silicon: the enrolled SRAM has been swapped out
        world.device.puf = new_device(derive_int(s.seed, "fake-puf"))
    elif s.name == "tamper-cert":
        _tamper_stored_cert(world, s.seed)

    result = run_session(s.variant, world.server, world.device, channel)
    transcript = result.transcript
    if s.leak_key and transcript and result.device.key is not None:
        transcript = transcript[:-1] + [transcript[-1] + result.device.key]
    return Outcome(
        scenario=s,
        confirmed=result.confirmed,
        keys_match=result.keys_match,
        abort_reason=result.abort_reason,
        aborted_by=result.aborted_by,
        transcript=transcript,
        transfer_log=world.enrollment.log + result.channel.log,
        secrets=_collect_secrets(result),
        enrollment_frames=world.enrollment.frames(),
    )


def eavesdrop_audit(outcome: Outcome) -> bool:
    """Pass iff no session secret appears verbatim anywhere on the wire.

    Helper data and certificates are public and may appear freely.
    """
    frames = outcome.enrollment_frames + outcome.transcript
    for secret in outcome.secrets.values():
        if any(secret in f for f in frames):
            return False
    return True


def expected_stage2(variant: Variant | str) -> list[MsgType]:
    """Honest Stage II message sequence for ``variant``."""
    variant = Variant(variant)
    seq = [MsgType.SESSION_REQ]
    if variant.cert_on_device:
        seq.append(MsgType.CERT_PUSH)
    if variant.ephemeral:
        seq.append(MsgType.EPHEMERAL_PK)
    seq += [MsgType.HS_CHALLENGE, MsgType.HS_RESPONSE]
    if variant.mutual:
        seq.append(MsgType.HS_CONFIRM)
    return seq
