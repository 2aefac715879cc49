"""PUF-rooted ECDH device authentication: SRAM-PUF model, fuzzy extractor,
Curve25519, certificate registry and protocol variants A-D."""

from .protocol import (
    AbortReason,
    Device,
    Server,
    SessionResult,
    Ttp,
    Variant,
    derive_session_key,
    enroll_device,
    enroll_server,
    run_session,
)

__all__ = [
    "AbortReason",
    "Device",
    "Server",
    "SessionResult",
    "Ttp",
    "Variant",
    "derive_session_key",
    "enroll_device",
    "enroll_server",
    "run_session",
]
__version__ = "0.1.0"
