"""Certificate registry ("cloud"): store, revoke, persist, serve over TCP.

Persistence is an append-only log of framed records (opcode | payload),
replayed on start-up. The TCP service speaks the same framing:

    request:  opcode (PUT 0x01 / GET 0x02 / REVOKE 0x03) | payload
    response: status (OK 0x00 / NOTFOUND 0x01 / REVOKED 0x02 / INVALID 0x03) | payload
"""

from __future__ import annotations

import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

from .identity import ID_BYTES, DeviceCertificate, MalformedCertificate, decode_cert, encode_cert, verify_cert
from .wire import MalformedFrame, frame, read_frame, split_frames

log = logging.getLogger(__name__)


class Op(IntEnum):
    PUT = 0x01
    GET = 0x02
    REVOKE = 0x03


class Status(IntEnum):
    OK = 0x00
    NOTFOUND = 0x01
    REVOKED = 0x02
    INVALID = 0x03


class RegistryError(Exception):
    pass


class NotFound(RegistryError):
    pass


class Revoked(RegistryError):
    pass


class CertInvalid(RegistryError):
    pass


@dataclass(frozen=True)
class RegistryRecord:
    id: bytes
    cert_bytes: bytes
    revoked: bool = False

    @property
    def cert(self) -> DeviceCertificate:
        return decode_cert(self.cert_bytes)


class Registry:
    """Thread-safe certificate store keyed by 48-bit device ID."""

    def __init__(self, pk_ttp: bytes, log_path: str | os.PathLike | None = None):
        self.pk_ttp = pk_ttp
        self.log_path = Path(log_path) if log_path is not None else None
        self._records: dict[bytes, RegistryRecord] = {}
        self._lock = threading.Lock()
        if self.log_path is not None and self.log_path.exists():
            self._replay()

    def _replay(self) -> None:
        bodies, tail = split_frames(self.log_path.read_bytes())
        if tail:
            log.warning("ignoring %d trailing bytes of a partial log record", len(tail))
        for body in bodies:
            op, payload = body[0], body[1:]
            try:
                if op == Op.PUT:
                    self._apply_put(payload)
                elif op == Op.REVOKE:
                    self._apply_revoke(payload)
                else:
                    log.warning("skipping unknown log opcode %#x", op)
            except RegistryError as exc:
                log.warning("skipping log record: %s", exc)

    def _append(self, op: Op, payload: bytes) -> None:
        if self.log_path is None:
            return
        with open(self.log_path, "ab") as fh:
            fh.write(frame(bytes([op]) + payload))
            fh.flush()
            os.fsync(fh.fileno())

    def _check(self, cert_bytes: bytes) -> DeviceCertificate:
        try:
            cert = decode_cert(cert_bytes)
        except MalformedCertificate as exc:
            raise CertInvalid(str(exc)) from exc
        if not isinstance(cert, DeviceCertificate) or not verify_cert(cert, self.pk_ttp):
            raise CertInvalid("certificate does not verify under the registry's TTP key")
        return cert

    def _apply_put(self, cert_bytes: bytes) -> None:
        cert = self._check(cert_bytes)
        self._records[cert.id] = RegistryRecord(cert.id, cert_bytes)

    def _apply_revoke(self, id: bytes) -> None:
        rec = self._records.get(id)
        if rec is None:
            raise NotFound(id.hex())
        self._records[id] = RegistryRecord(id, rec.cert_bytes, revoked=True)

    def put(self, cert: DeviceCertificate | bytes) -> None:
        cert_bytes = cert if isinstance(cert, bytes) else encode_cert(cert)
        with self._lock:
            self._apply_put(cert_bytes)
            self._append(Op.PUT, cert_bytes)

    def get(self, id: bytes) -> RegistryRecord:
        rec = self._records.get(id)
        if rec is None:
            raise NotFound(id.hex())
        if rec.revoked:
            raise Revoked(id.hex())
        return rec

    def revoke(self, id: bytes) -> None:
        with self._lock:
            self._apply_revoke(id)
            self._append(Op.REVOKE, id)

    def snapshot(self) -> dict[bytes, RegistryRecord]:
        with self._lock:
            return dict(self._records)

    def handle(self, request: bytes) -> bytes:
        """Serve one wire request body; returns the response body."""
        if not request:
            return bytes([Status.INVALID])
        op, payload = request[0], request[1:]
        try:
            if op == Op.PUT:
                self.put(payload)
                return bytes([Status.OK])
            if op == Op.GET:
                return bytes([Status.OK]) + self.get(payload).cert_bytes
            if op == Op.REVOKE:
                self.revoke(payload)
                return bytes([Status.OK])
        except NotFound:
            return bytes([Status.NOTFOUND])
        except Revoked:
            return bytes([Status.REVOKED])
        except CertInvalid:
            return bytes([Status.INVALID])
        return bytes([Status.INVALID])


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        registry: Registry = self.server.registry  # type: ignore[attr-defined]
        while True:
            try:
                body = read_frame(self.rfile)
            except MalformedFrame as exc:
                log.info("dropping client: %s", exc)
                return
            if body is None:
                return
            self.wfile.write(frame(registry.handle(body)))
            self.wfile.flush()


class RegistryServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, registry: Registry, host: str = "127.0.0.1", port: int = 0):
        self.registry = registry
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


class RegistryClient:
    """Synchronous client with the same put/get/revoke surface as :class:`Registry`."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def close(self) -> None:
        self._file.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, op: Op, payload: bytes) -> bytes:
        self._file.write(frame(bytes([op]) + payload))
        self._file.flush()
        body = read_frame(self._file)
        if not body:
            raise RegistryError("registry closed the connection")
        status, rest = body[0], body[1:]
        if status == Status.NOTFOUND:
            raise NotFound(payload.hex() if op != Op.PUT else "")
        if status == Status.REVOKED:
            raise Revoked(payload.hex())
        if status == Status.INVALID:
            raise CertInvalid("registry rejected the request")
        return rest

    def put(self, cert: DeviceCertificate | bytes) -> None:
        self._call(Op.PUT, cert if isinstance(cert, bytes) else encode_cert(cert))

    def get(self, id: bytes) -> RegistryRecord:
        if len(id) != ID_BYTES:
            raise ValueError("device IDs are 6 bytes")
        return RegistryRecord(id, self._call(Op.GET, id))

    def revoke(self, id: bytes) -> None:
        self._call(Op.REVOKE, id)
