"""The cross-domain channel: ``P2XG`` messages and the transports that carry them.

Message layout (little-endian)::

    magic "P2XG" | u16 version | u8 domain | u8 matrix | u32 rows | u32 cols | f32 lambda | rows*cols f32

``lambda`` is NaN when obfuscation is off. Only :class:`ObfuscatedBundle`
objects can be encoded, so nothing but noised embeddings ever reaches a
transport.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import time
from dataclasses import dataclass

import numpy as np

from .numeric import Tensor
from .privacy import MATRIX_CODES, ObfuscatedBundle

MAGIC = b"P2XG"
VERSION = 1
HEADER = struct.Struct("<4sHBBIIf")
DOMAIN_CODES = {"A": 0, "B": 1}
_CODE_NAMES = {v: k for k, v in MATRIX_CODES.items()}
_DOMAIN_NAMES = {v: k for k, v in DOMAIN_CODES.items()}


class ExchangeError(RuntimeError):
    pass


@dataclass(eq=False)
class ExchangeMessage:
    domain: str
    matrix: str
    lam: float | None
    payload: np.ndarray
    version: int = VERSION


def encode_message(matrix: np.ndarray, domain: str, kind: str, lam: float | None) -> bytes:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ExchangeError(f"exchange payload must be 2-D, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ExchangeError("exchange payload contains NaN or Inf")
    head = HEADER.pack(MAGIC, VERSION, DOMAIN_CODES[domain], MATRIX_CODES[kind], matrix.shape[0],
                       matrix.shape[1], float("nan") if lam is None else lam)
    return head + np.ascontiguousarray(matrix, dtype="<f4").tobytes()


def parse_header(head: bytes) -> tuple[int, int, int, int, int, float]:
    if len(head) < HEADER.size:
        raise ExchangeError(f"truncated header: expected {HEADER.size} bytes, got {len(head)}")
    magic, version, dcode, mcode, rows, cols, lam = HEADER.unpack_from(head)
    if magic != MAGIC:
        raise ExchangeError("not an exchange message")
    if version != VERSION:
        raise ExchangeError(f"protocol version mismatch: peer speaks {version}, expected {VERSION}")
    if dcode not in _DOMAIN_NAMES or mcode not in _CODE_NAMES:
        raise ExchangeError(f"bad domain/matrix code {dcode}/{mcode}")
    return version, dcode, mcode, rows, cols, lam


def decode_message(blob: bytes) -> ExchangeMessage:
    version, dcode, mcode, rows, cols, lam = parse_header(blob)
    expected = rows * cols * 4
    actual = len(blob) - HEADER.size
    if actual != expected:
        raise ExchangeError(f"payload length mismatch: expected {expected} bytes, got {actual}")
    payload = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(rows, cols).astype(np.float32)
    return ExchangeMessage(_DOMAIN_NAMES[dcode], _CODE_NAMES[mcode], None if np.isnan(lam) else float(lam),
                           payload, version)


def encode_bundle(bundle: ObfuscatedBundle) -> list[bytes]:
    if not isinstance(bundle, ObfuscatedBundle):
        raise TypeError(f"only ObfuscatedBundle can cross the domain boundary, got {type(bundle).__name__}")
    return [encode_message(t.data, bundle.domain, name, bundle.lambda_used)
            for name, t in bundle.matrices().items()]


def decode_bundle(messages: list[bytes]) -> ObfuscatedBundle:
    decoded = [decode_message(m) for m in messages]
    domains = {m.domain for m in decoded}
    names = {m.matrix: m for m in decoded}
    if len(domains) != 1 or set(names) != set(MATRIX_CODES):
        raise ExchangeError(f"incomplete bundle: domains {sorted(domains)}, matrices {sorted(names)}")
    t = {k: Tensor(v.payload) for k, v in names.items()}
    return ObfuscatedBundle(domains.pop(), t["specific"], t["common"], t["specific_aug"], t["common_aug"],
                            decoded[0].lam)


# -- transports ------------------------------------------------------------------

class Transport:
    """Carries whole messages and fingerprints every byte it sent.

    With ``record`` the sent bytes are also kept in ``transcript``; long runs
    can switch that off and keep only the running SHA-256 in ``digest``.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.transcript = bytearray()
        self._sha = hashlib.sha256()
        self.sent_messages = 0

    @property
    def digest(self) -> str:
        return self._sha.hexdigest()

    def send(self, message: bytes) -> None:
        if self.record:
            self.transcript += message
        self._sha.update(message)
        self.sent_messages += 1
        self._send(message)

    def recv(self) -> bytes:
        raise NotImplementedError

    def _send(self, message: bytes) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = 60.0, record: bool = True):
        super().__init__(record)
        self.inbox, self.outbox, self.timeout = inbox, outbox, timeout

    @classmethod
    def pair(cls, timeout: float = 60.0, record: bool = True):
        a_to_b, b_to_a = queue.Queue(), queue.Queue()
        return cls(b_to_a, a_to_b, timeout, record), cls(a_to_b, b_to_a, timeout, record)

    def _send(self, message: bytes) -> None:
        self.outbox.put(bytes(message))

    def recv(self) -> bytes:
        try:
            message = self.inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise ExchangeError("peer sent nothing before the timeout") from None
        if message is None:
            raise ExchangeError("peer disconnected")
        return message

    def close(self) -> None:
        self.outbox.put(None)


class SocketTransport(Transport):
    """Messages over a TCP byte stream; framing comes from the header's rows/cols."""

    def __init__(self, sock: socket.socket, record: bool = True):
        super().__init__(record)
        self.sock = sock
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def listen(cls, host: str = "127.0.0.1", port: int = 0) -> socket.socket:
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        return server

    @classmethod
    def accept(cls, server: socket.socket, timeout: float = 60.0, record: bool = True) -> "SocketTransport":
        server.settimeout(timeout)
        conn, _ = server.accept()
        conn.settimeout(None)
        return cls(conn, record)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 60.0, record: bool = True) -> "SocketTransport":
        deadline = time.monotonic() + timeout
        while True:
            try:
                sock = socket.create_connection((host, port), timeout=timeout)
                sock.settimeout(None)
                return cls(sock, record)
            except ConnectionRefusedError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)

    @classmethod
    def loopback_pair(cls, record: bool = True):
        server = cls.listen()
        port = server.getsockname()[1]
        client = cls.connect("127.0.0.1", port, record=record)
        peer = cls.accept(server, record=record)
        server.close()
        return client, peer

    def _send(self, message: bytes) -> None:
        self.sock.sendall(message)

    def _recv_exact(self, n: int, what: str) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.sock.recv(min(n - len(buf), 1 << 20))
            if not chunk:
                raise ExchangeError(f"peer disconnected mid-message: expected {n} {what} bytes, got {len(buf)}")
            buf += chunk
        return bytes(buf)

    def recv(self) -> bytes:
        head = self._recv_exact(HEADER.size, "header")
        _, _, _, rows, cols, _ = parse_header(head)
        return head + self._recv_exact(rows * cols * 4, "payload")

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def send_bundle(transport: Transport, bundle: ObfuscatedBundle) -> None:
    for message in encode_bundle(bundle):
        transport.send(message)


def recv_bundle(transport: Transport, expect_domain: str | None = None) -> ObfuscatedBundle:
    remote = decode_bundle([transport.recv() for _ in MATRIX_CODES])
    if expect_domain is not None and remote.domain != expect_domain:
        raise ExchangeError(f"expected a bundle from domain {expect_domain}, got {remote.domain}")
    return remote


def exchange_session(local: ObfuscatedBundle, transport: Transport, send_first: bool | None = None) -> ObfuscatedBundle:
    """Swap bundles with the peer. Domain A sends first by default, B receives first."""
    if send_first is None:
        send_first = local.domain == "A"
    peer = "B" if local.domain == "A" else "A"
    if send_first:
        send_bundle(transport, local)
        return recv_bundle(transport, peer)
    remote = recv_bundle(transport, peer)
    send_bundle(transport, local)
    return remote


def audit_transcript(transcript: bytes) -> list[ExchangeMessage]:
    """Parse a byte transcript; raise unless it is a clean sequence of ``P2XG`` messages."""
    out, pos, blob = [], 0, bytes(transcript)
    while pos < len(blob):
        _, _, _, rows, cols, _ = parse_header(blob[pos:pos + HEADER.size])
        end = pos + HEADER.size + rows * cols * 4
        if end > len(blob):
            raise ExchangeError(f"transcript ends inside a message at byte {pos}")
        out.append(decode_message(blob[pos:end]))
        pos = end
    return out
