"""Transfer counts, transferred bits and device NVM per protocol variant.

Two modes:

* ``paper``: every honest message is described by the fields it carries and
  each field is charged a fixed size (48-bit ID, 256-bit keys and
  signatures, 752-byte helper data, plus request/handshake constants).
* ``measured``: sums the frames actually put on the wire by a protocol run,
  framing included, so the gap to the nominal figures stays visible.

Stage I data counts only transfers that involve the device; transfer counts
include the server's enrollment.
"""

from __future__ import annotations

from dataclasses import dataclass

from .protocol import MsgType, Variant
from .transport import TransferRecord

VARIANTS = tuple(Variant)
STAGES = ("I", "II")


@dataclass(frozen=True)
class PaperConstants:
    id_bits: int = 48
    key_bits: int = 256
    sig_bits: int = 256
    hd_bits: int = 752 * 8
    # request and handshake sizes are not listed field by field; these values
    # are the only ones consistent with every Stage II total
    session_req_bits: int = 48
    handshake_one_way_bits: int = 48
    handshake_mutual_bits: int = 112

    @property
    def device_cert_bits(self) -> int:
        return self.id_bits + self.hd_bits + self.key_bits + self.sig_bits

    @property
    def server_cert_bits(self) -> int:
        return self.id_bits + self.key_bits + self.sig_bits

    def size(self, name: str) -> int:
        return {
            "id": self.id_bits,
            "hd": self.hd_bits,
            "pk": self.key_bits,
            "pk_ttp": self.key_bits,
            "sig": self.sig_bits,
            "device_cert": self.device_cert_bits,
            "server_cert": self.server_cert_bits,
            "session_request": self.session_req_bits,
            "handshake_one_way": self.handshake_one_way_bits,
            "handshake_mutual": self.handshake_mutual_bits,
        }[name]


PAPER = PaperConstants()


@dataclass(frozen=True)
class Flow:
    stage: str
    sender: str
    receiver: str
    msg_type: MsgType
    fields: tuple[str, ...] = ()

    @property
    def involves_device(self) -> bool:
        return "device" in (self.sender, self.receiver)


def honest_flows(variant: Variant | str) -> list[Flow]:
    """Every message of an honest enrollment plus one session, in order."""
    v = Variant(variant)
    flows = [Flow("I", "device", "ttp", MsgType.ENROLL_REQ, ("id", "hd", "pk"))]
    reply = {Variant.A: ("pk_ttp",), Variant.B: ("sig", "pk_ttp"), Variant.D: ("sig",)}.get(v)
    if reply is not None:
        flows.append(Flow("I", "ttp", "device", MsgType.ENROLL_RESP, reply))
    if v.mutual:
        flows += [
            Flow("I", "server", "ttp", MsgType.ENROLL_REQ, ("id", "pk")),
            Flow("I", "ttp", "server", MsgType.ENROLL_RESP, ("server_cert", "pk_ttp")),
        ]

    request = ("session_request",) + (("hd",) if v.uses_cloud else ()) + (("server_cert",) if v.mutual else ())
    flows.append(Flow("II", "server", "device", MsgType.SESSION_REQ, request))
    if v.cert_on_device:
        flows.append(Flow("II", "device", "server", MsgType.CERT_PUSH, ("device_cert",)))
    if v.ephemeral:
        flows.append(Flow("II", "server", "device", MsgType.EPHEMERAL_PK, ("pk",)))
    # the handshake is only sized as a whole; charge it to the challenge
    hs = "handshake_mutual" if v.mutual else "handshake_one_way"
    flows += [
        Flow("II", "server", "device", MsgType.HS_CHALLENGE, (hs,)),
        Flow("II", "device", "server", MsgType.HS_RESPONSE),
    ]
    if v.mutual:
        flows.append(Flow("II", "server", "device", MsgType.HS_CONFIRM))
    return flows


def _check_mode(mode: str, log) -> None:
    if mode not in ("paper", "measured"):
        raise ValueError(f"mode must be 'paper' or 'measured', got {mode!r}")
    if mode == "measured" and log is None:
        raise ValueError("measured mode needs a transfer log")


def transfer_count(
    variant: Variant | str, stage: str, mode: str = "paper", log: list[TransferRecord] | None = None
) -> int:
    _check_mode(mode, log)
    if mode == "measured":
        return sum(1 for r in log if r.stage == stage)
    return sum(1 for f in honest_flows(variant) if f.stage == stage)


def bits_transferred(
    variant: Variant | str,
    stage: str,
    mode: str = "paper",
    log: list[TransferRecord] | None = None,
    constants: PaperConstants = PAPER,
) -> int:
    _check_mode(mode, log)
    if mode == "measured":
        return sum(r.bits for r in log if r.stage == stage and "device" in (r.sender, r.receiver))
    return sum(
        constants.size(name)
        for f in honest_flows(variant)
        if f.stage == stage and f.involves_device
        for name in f.fields
    )


def nvm_contents(variant: Variant | str) -> tuple[str, ...]:
    v = Variant(variant)
    return (("device_cert",) if v.cert_on_device else ()) + (("pk_ttp",) if v.mutual else ())


def nvm_requirement(variant: Variant | str, constants: PaperConstants = PAPER) -> int:
    return sum(constants.size(name) for name in nvm_contents(variant))


@dataclass(frozen=True)
class VariantProperties:
    device_authentication: bool
    server_authentication: bool
    nvm_requirement: str  # none / negligible / large
    cloud_infrastructure: bool
    certificate_management: str  # online / offline
    signature_verification_on_device: bool


def _nvm_class(bits: int) -> str:
    if bits == 0:
        return "none"
    return "negligible" if bits <= PAPER.key_bits else "large"


def property_matrix() -> dict[Variant, VariantProperties]:
    return {
        v: VariantProperties(
            device_authentication=True,
            server_authentication=v.mutual,
            nvm_requirement=_nvm_class(nvm_requirement(v)),
            cloud_infrastructure=v.uses_cloud,
            certificate_management="online" if v.uses_cloud else "offline",
            signature_verification_on_device=v.mutual,
        )
        for v in VARIANTS
    }


@dataclass(frozen=True)
class VariantFigures:
    transfers: dict[str, int]
    bits: dict[str, int]
    nvm: int

    @property
    def total_transfers(self) -> int:
        return sum(self.transfers.values())

    @property
    def total_bits(self) -> int:
        return sum(self.bits.values())


def figures(variant: Variant | str, mode: str = "paper", log=None, nvm_bits: int | None = None) -> VariantFigures:
    """Transfer counts, bit totals and NVM for one variant.

    In measured mode pass the run's transfer log and the device's measured NVM.
    """
    _check_mode(mode, log)
    return VariantFigures(
        transfers={s: transfer_count(variant, s, mode, log) for s in STAGES},
        bits={s: bits_transferred(variant, s, mode, log) for s in STAGES},
        nvm=nvm_requirement(variant) if mode == "paper" else nvm_bits,
    )


_NVM_LABELS = {"device_cert": "{Certid}", "pk_ttp": "{PKttp}"}


def format_table(columns: dict[Variant, VariantFigures]) -> str:
    label_width = 48
    col_width = 16
    variants = list(columns)

    def row(label: str, values) -> str:
        return label.ljust(label_width) + "".join(str(v).rjust(col_width) for v in values)

    lines = [row("", [f"Variant {v.value}" for v in variants])]
    lines.append("Number of Transfers")
    for s in STAGES:
        lines.append(row(f"  Stage {s}", [columns[v].transfers[s] for v in variants]))
    lines.append(row("  Total:", [columns[v].total_transfers for v in variants]))
    lines.append("Data Transfer Size in bits (with device only)")
    for s in STAGES:
        lines.append(row(f"  Stage {s}", [columns[v].bits[s] for v in variants]))
    lines.append(row("  Total:", [columns[v].total_bits for v in variants]))
    lines.append(row("NVM Requirement (device)", [columns[v].nvm for v in variants]))
    lines.append(row("", ["".join(_NVM_LABELS[n] for n in nvm_contents(v)) or "-" for v in variants]))
    return "\n".join(lines)
