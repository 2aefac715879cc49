"""In-process message channel with a transfer log and an interception hook."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol


@dataclass(frozen=True)
class TransferRecord:
    stage: str  # "I" enrollment, "II" session
    sender: str
    receiver: str
    msg_type: int
    bits: int  # whole frame on the wire, length prefix included


@dataclass(frozen=True)
class Hop:
    """What an interceptor knows about a frame in flight."""

    stage: str
    index: int  # position among frames sent in this stage
    sender: str
    receiver: str


class Interceptor(Protocol):
    def __call__(self, hop: Hop, frame: bytes) -> list[bytes]: ...


def passthrough(hop: Hop, frame: bytes) -> list[bytes]:
    return [frame]


@dataclass
class Channel:
    """Ordered, loss-free delivery unless an interceptor says otherwise.

    ``log`` records every frame an endpoint sent; ``wire`` records every frame
    actually delivered, which is what an eavesdropper on the receiving side
    observes.
    """

    interceptor: Interceptor | Callable[[Hop, bytes], list[bytes]] = passthrough
    log: list[TransferRecord] = field(default_factory=list)
    wire: list[tuple[Hop, bytes]] = field(default_factory=list)
    _counts: dict[str, int] = field(default_factory=dict)

    def send(self, stage: str, sender: str, receiver: str, frame: bytes) -> list[bytes]:
        index = self._counts.get(stage, 0)
        self._counts[stage] = index + 1
        msg_type = frame[4] if len(frame) > 4 else -1
        self.log.append(TransferRecord(stage, sender, receiver, msg_type, 8 * len(frame)))
        hop = Hop(stage, index, sender, receiver)
        delivered = list(self.interceptor(hop, frame))
        self.wire.extend((hop, f) for f in delivered)
        return delivered

    def frames(self, stage: str | None = None) -> list[bytes]:
        return [f for hop, f in self.wire if stage is None or hop.stage == stage]
