import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pufkex.curve25519 import LowOrderResult, x25519_base
from pufkex.harness import build_world, expected_stage2
from pufkex.protocol import (
    AbortReason,
    Device,
    EnrollmentFailed,
    Field,
    MsgType,
    Phase,
    ProtocolAbort,
    ProtocolMessage,
    Server,
    Ttp,
    Variant,
    VariantMismatch,
    derive_session_key,
    device_tag,
    enroll_device,
    enroll_server,
    handshake,
    message,
    run_session,
    server_tag,
)
from pufkex.puf import NoiseModel, new_device
from pufkex.symmetric import Drbg
from pufkex.transport import Channel

VARIANTS = list(Variant)
STAGE_COUNTS = {"A": (4, 4), "B": (4, 5), "C": (1, 4), "D": (2, 5)}


def test_variant_properties():
    assert [v.mutual for v in VARIANTS] == [True, True, False, False]
    assert [v.uses_cloud for v in VARIANTS] == [True, False, True, False]
    assert [v.cert_on_device for v in VARIANTS] == [False, True, False, True]
    assert [v.ephemeral for v in VARIANTS] == [False, False, True, True]


@pytest.mark.parametrize("variant", VARIANTS)
def test_honest_run(variant, ttp_keypair):
    world = build_world(variant, seed=1, ttp_keypair=ttp_keypair)
    result = run_session(variant, world.server, world.device)
    assert result.abort_reason is None
    assert result.confirmed and result.keys_match
    assert len(result.server_key) == 32


@pytest.mark.parametrize("variant", VARIANTS)
def test_message_counts(variant, ttp_keypair):
    world = build_world(variant, seed=2, ttp_keypair=ttp_keypair)
    result = run_session(variant, world.server, world.device)
    stage1, stage2 = STAGE_COUNTS[variant.value]
    assert len(world.enrollment.log) == stage1
    assert len(result.log) == stage2
    assert [r.msg_type for r in result.log] == list(expected_stage2(variant))


@pytest.mark.parametrize("variant", VARIANTS)
def test_device_nvm_contents(variant, ttp_keypair):
    device = build_world(variant, seed=3, ttp_keypair=ttp_keypair).device
    assert (device.nvm.pk_ttp is not None) == variant.mutual
    assert (device.nvm.cert is not None) == variant.cert_on_device
    if variant is Variant.C:
        assert device.nvm.bits() == 0
    if variant is Variant.A:
        assert device.nvm.bits() == 256


@pytest.mark.parametrize("variant", VARIANTS)
def test_device_stores_no_secret(variant, ttp_keypair):
    world = build_world(variant, seed=4, noise=0.0, secret=b"\x5a" * 32, ttp_keypair=ttp_keypair)
    blob = repr(world.device.nvm).encode() + (world.device.nvm.pk_ttp or b"")
    assert b"\x5a" * 32 not in blob
    if world.device.nvm.cert is not None:
        assert world.device.nvm.cert.pk == x25519_base(b"\x5a" * 32)


def test_variant_mismatch(ttp_keypair):
    world = build_world("A", seed=5, ttp_keypair=ttp_keypair)
    with pytest.raises(VariantMismatch):
        run_session("B", world.server, world.device)


def test_server_variant_preconditions():
    server = Server(b"\x00" * 6, b"rng")
    with pytest.raises(VariantMismatch):
        server.session(Variant.A, b"\x01" * 6)
    with pytest.raises(VariantMismatch):
        server.session(Variant.D, b"\x01" * 6)
    with pytest.raises(VariantMismatch):
        enroll_server(Variant.C, Ttp(None), server)


def test_device_enrolls_once(ttp_keypair):
    device = Device(b"\x01" * 6, new_device(1))
    enroll_device(Variant.D, Ttp(ttp_keypair), device)
    with pytest.raises(EnrollmentFailed):
        device.enrollment_request(Variant.D)
    fresh = Device(b"\x02" * 6, new_device(2))
    with pytest.raises(EnrollmentFailed):
        fresh.finish_enrollment(None)
    with pytest.raises(EnrollmentFailed):
        fresh.session()


def test_cloud_variant_needs_registry(ttp_keypair):
    device = Device(b"\x01" * 6, new_device(1))
    with pytest.raises(EnrollmentFailed):
        enroll_device(Variant.A, Ttp(ttp_keypair), device)


def test_enrollment_replies(ttp_keypair):
    for variant, fields in {"B": {Field.SIG, Field.PK_TTP}, "D": {Field.SIG}, "A": {Field.PK_TTP}}.items():
        world = build_world(variant, seed=6, ttp_keypair=ttp_keypair)
        reply = ProtocolMessage.decode(world.enrollment.frames("I")[1])
        assert reply.msg_type is MsgType.ENROLL_RESP
        assert set(reply.fields) == fields


def test_kdf_properties():
    w = bytes(range(32))
    k = derive_session_key(w, Variant.A, b"t")
    assert len(k) == 32
    assert k == derive_session_key(w, Variant.A, b"t")
    assert k != derive_session_key(w, Variant.B, b"t")
    assert k != derive_session_key(w, Variant.A, b"u")
    assert k != derive_session_key(w[::-1], Variant.A, b"t")
    with pytest.raises(LowOrderResult):
        derive_session_key(bytes(32), Variant.A, b"t")


def test_confirmation_tags_are_directional():
    k, n_d, n_s = b"k" * 32, b"d" * 16, b"s" * 16
    assert device_tag(k, n_s) != server_tag(k, n_d, n_s)
    assert server_tag(k, n_d, n_s) != server_tag(k, n_s, n_d)


@pytest.mark.parametrize("mutual", [True, False])
def test_handshake(mutual):
    handshake(b"k" * 32, b"k" * 32, mutual, Drbg(b"r"))
    with pytest.raises(ProtocolAbort) as exc:
        handshake(b"k" * 32, b"j" * 32, mutual, Drbg(b"r"))
    assert exc.value.reason is AbortReason.HANDSHAKE_MAC_MISMATCH


@pytest.mark.parametrize("variant,upgrade", [("C", False), ("D", False), ("A", True), ("B", True)])
def test_ephemeral_sessions_get_fresh_keys(variant, upgrade, ttp_keypair):
    world = build_world(variant, seed=7, ephemeral_upgrade=upgrade, ttp_keypair=ttp_keypair)
    keys = set()
    for _ in range(5):
        result = run_session(variant, world.server, world.device)
        assert result.confirmed and result.keys_match
        keys.add(result.server_key)
    assert len(keys) == 5


@pytest.mark.parametrize("variant", ["A", "B"])
def test_ephemeral_upgrade(variant, ttp_keypair):
    world = build_world(variant, seed=8, ephemeral_upgrade=True, ttp_keypair=ttp_keypair)
    results = [run_session(variant, world.server, world.device) for _ in range(3)]
    assert all(r.confirmed and r.keys_match for r in results)
    shared = {r.server.shared_secret for r in results}
    assert len(shared) == 3
    request = ProtocolMessage.decode(results[0].transcript[0])
    assert Field.EPH_PK in request.fields and Field.EPH_SIG in request.fields


@pytest.mark.parametrize("variant", ["A", "B"])
def test_static_mutual_variants_reuse_dh_secret(variant, ttp_keypair):
    world = build_world(variant, seed=9, noise=0.0, ttp_keypair=ttp_keypair)
    a = run_session(variant, world.server, world.device)
    b = run_session(variant, world.server, world.device)
    # no fresh contribution reaches the KDF without the ephemeral upgrade
    assert a.server.shared_secret == b.server.shared_secret
    assert a.server_key == b.server_key
    assert a.confirmed and b.confirmed


@pytest.mark.parametrize("variant", ["C", "D"])
def test_consecutive_ephemeral_keys_differ(variant, ttp_keypair):
    world = build_world(variant, seed=16, ttp_keypair=ttp_keypair)
    seen = []
    for _ in range(2):
        result = run_session(variant, world.server, world.device)
        eph = [ProtocolMessage.decode(f) for f in result.transcript]
        seen.append(next(m.fields[Field.PK] for m in eph if m.msg_type is MsgType.EPHEMERAL_PK))
    assert seen[0] != seen[1]


def _force_reconstruct_failure(world):
    world.device.puf = new_device(999_999)


@pytest.mark.parametrize("variant", VARIANTS)
def test_implicit_rejection_surfaces_as_mac_mismatch(variant, ttp_keypair):
    world = build_world(variant, seed=10, ttp_keypair=ttp_keypair)
    _force_reconstruct_failure(world)
    result = run_session(variant, world.server, world.device)
    assert not result.confirmed
    assert result.abort_reason is AbortReason.HANDSHAKE_MAC_MISMATCH
    assert result.aborted_by == "server"


@pytest.mark.parametrize("variant", VARIANTS)
def test_explicit_rejection_reports_reconstruct_failed(variant, ttp_keypair):
    world = build_world(variant, seed=11, ttp_keypair=ttp_keypair)
    world.device.implicit_rejection = False
    # with ties almost certain on an unrelated PUF, scan for a failing readout
    _force_reconstruct_failure(world)
    result = run_session(variant, world.server, world.device)
    if world.device.reconstruct_failures:
        assert result.abort_reason is AbortReason.RECONSTRUCT_FAILED
        assert result.aborted_by == "device"
    else:
        assert result.abort_reason is AbortReason.HANDSHAKE_MAC_MISMATCH
    assert not result.confirmed


def test_session_request_for_other_device_is_refused(ttp_keypair):
    world = build_world("D", seed=12, ttp_keypair=ttp_keypair)
    session = world.device.session()
    out = session.receive(message(MsgType.SESSION_REQ, id=b"\xee" * 6))
    assert out == [] and session.phase is Phase.ABORTED
    assert session.abort_reason is AbortReason.UNEXPECTED_MESSAGE


def test_abort_is_absorbing(ttp_keypair):
    world = build_world("C", seed=13, ttp_keypair=ttp_keypair)
    srv = world.server.session(Variant.C, world.device.id)
    frames = srv.start()
    dev = world.device.session()
    dev.receive(b"\x00\x00\x00\x01\x99")
    assert dev.phase is Phase.ABORTED and dev.abort_reason is AbortReason.MALFORMED_MESSAGE
    for f in frames:
        assert dev.receive(f) == []
    assert dev.phase is Phase.ABORTED and dev.abort_reason is AbortReason.MALFORMED_MESSAGE


@pytest.mark.parametrize("variant", VARIANTS)
def test_out_of_order_message_aborts(variant, ttp_keypair):
    world = build_world(variant, seed=14, ttp_keypair=ttp_keypair)
    dev = world.device.session()
    dev.receive(message(MsgType.HS_CHALLENGE, nonce=b"n" * 16))
    assert dev.abort_reason is AbortReason.UNEXPECTED_MESSAGE


@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=64))
def test_garbage_never_raises(data):
    device = Device(b"\x01" * 6, new_device(1), NoiseModel(0.15, 1))
    device.variant = Variant.D
    session = device.session()
    out = session.receive(data)
    # random bytes are never a well-formed request for this device
    assert out == []
    assert session.phase is Phase.ABORTED
    assert session.abort_reason in (AbortReason.MALFORMED_MESSAGE, AbortReason.UNEXPECTED_MESSAGE)
    assert session.receive(message(MsgType.SESSION_REQ, id=device.id)) == []


def test_low_order_peer_key_aborts(ttp_keypair):
    world = build_world("C", seed=15, ttp_keypair=ttp_keypair)

    def zero_ephemeral(hop, frame):
        msg = ProtocolMessage.decode(frame)
        if msg.msg_type is MsgType.EPHEMERAL_PK:
            return [message(MsgType.EPHEMERAL_PK, pk=bytes(32))]
        return [frame]

    result = run_session("C", world.server, world.device, Channel(zero_ephemeral))
    assert result.abort_reason is AbortReason.LOW_ORDER_RESULT
    assert result.aborted_by == "device"
