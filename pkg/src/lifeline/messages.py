"""Emergency message model and the bit-exact wire codec.

Messages travel between nodes as small canonical XML documents: a fixed
element set in a fixed order with no optional whitespace, so that equal
messages always encode to identical bytes.  The same codec is used over
in-memory simulator links and, in live mode, length-prefixed over TCP.
"""

from __future__ import annotations

import base64
import socket
import struct
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional
from xml.etree import ElementTree

WIRE_VERSION = "1"
MESSAGE_ROOT = "lifeline-msg"
CONTROL_ROOT = "lifeline-ctl"
# Magic prefix carried by every encoded control packet (HELLO/TC).
CONTROL_MAGIC = b"<lifeline-ctl "

MAX_PAYLOAD_BYTES = 255
PRIORITY_LEVELS = 5

ADDRESS_SPACE = 1 << 32
STATION_RANGE_SIZE = 256
# Top 256 addresses of the space are reserved for emergency stations.
STATION_RANGE_START = ADDRESS_SPACE - STATION_RANGE_SIZE

# Live-mode TCP port; frames are 4-byte big-endian length + document bytes.
DEFAULT_PORT = 33333

_MESSAGE_FIELDS = (
    "msg_id", "src", "dst", "priority",
    "payload", "sender_load", "hop_count", "created_at",
)


class MalformedDocument(ValueError):
    """Bytes do not parse as a well-formed message document."""


class InvariantViolation(ValueError):
    """Document parsed but a field violates a message invariant."""


@dataclass(frozen=True, order=True)
class NodeId:
    """Opaque 32-bit node address, rendered as dotted-quad text."""

    address: int

    def __post_init__(self) -> None:
        if not 0 <= self.address < ADDRESS_SPACE:
            raise InvariantViolation(f"address out of range: {self.address}")

    def __str__(self) -> str:
        a = self.address
        return f"{(a >> 24) & 0xFF}.{(a >> 16) & 0xFF}.{(a >> 8) & 0xFF}.{a & 0xFF}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        parts = text.strip().split(".")
        if len(parts) != 4:
            raise MalformedDocument(f"not a dotted-quad address: {text!r}")
        try:
            octets = [int(p) for p in parts]
        except ValueError:
            raise MalformedDocument(f"not a dotted-quad address: {text!r}") from None
        if any(not 0 <= o <= 255 for o in octets):
            raise MalformedDocument(f"octet out of range in: {text!r}")
        return cls((octets[0] << 24) | (octets[1] << 16) | (octets[2] << 8) | octets[3])

    @property
    def is_station_address(self) -> bool:
        return self.address >= STATION_RANGE_START


def make_msg_id(src: NodeId, counter: int) -> int:
    """Collision-free 64-bit id: source address packed with a per-node counter."""
    return (src.address << 32) | (counter & 0xFFFFFFFF)


class PacketKind(Enum):
    EMERGENCY = "emergency"
    CONTROL = "control"
    OTHER = "other"


@dataclass
class EmergencyMessage:
    """One unit of emergency traffic.

    priority runs 0 (most urgent) to 4; demotion saturates at 4.
    sender_load is the originating device's load percentage, attached at
    creation and never mutated in transit.
    """

    msg_id: int
    src: NodeId
    dst: NodeId
    priority: int
    payload: bytes
    sender_load: int
    hop_count: int = 0
    created_at: int = 0

    def validate(self) -> None:
        if not 0 <= self.msg_id < (1 << 64):
            raise InvariantViolation(f"msg_id out of range: {self.msg_id}")
        if not 0 <= self.priority < PRIORITY_LEVELS:
            raise InvariantViolation(f"priority out of range: {self.priority}")
        if not 1 <= len(self.payload) <= MAX_PAYLOAD_BYTES:
            raise InvariantViolation(f"payload length out of range: {len(self.payload)}")
        if not 0 <= self.sender_load <= 100:
            raise InvariantViolation(f"sender_load out of range: {self.sender_load}")
        if self.hop_count < 0:
            raise InvariantViolation(f"negative hop_count: {self.hop_count}")
        if self.created_at < 0:
            raise InvariantViolation(f"negative created_at: {self.created_at}")


def encode_message(msg: EmergencyMessage) -> bytes:
    """Canonical wire encoding; equal messages yield identical bytes."""
    msg.validate()
    payload_b64 = base64.b64encode(msg.payload).decode("ascii")
    parts = [
        f'<{MESSAGE_ROOT} v="{WIRE_VERSION}">',
        f"<msg_id>{msg.msg_id}</msg_id>",
        f"<src>{msg.src}</src>",
        f"<dst>{msg.dst}</dst>",
        f"<priority>{msg.priority}</priority>",
        f"<payload>{payload_b64}</payload>",
        f"<sender_load>{msg.sender_load}</sender_load>",
        f"<hop_count>{msg.hop_count}</hop_count>",
        f"<created_at>{msg.created_at}</created_at>",
        f"</{MESSAGE_ROOT}>",
    ]
    return "".join(parts).encode("ascii")


def _int_field(fields: dict, name: str) -> int:
    try:
        return int(fields[name])
    except ValueError:
        raise MalformedDocument(f"non-integer {name}: {fields[name]!r}") from None


def decode_message(data: bytes) -> EmergencyMessage:
    """Decode wire bytes back into a message, enforcing all invariants.

    Raises MalformedDocument for anything that is not a well-formed v1
    message document, InvariantViolation for parsed-but-out-of-range
    fields.  Never raises anything else on arbitrary input.
    """
    try:
        root = ElementTree.fromstring(data)
    # expat raises ParseError for syntax, ValueError/LookupError for bogus
    # encoding declarations; this boundary must be total over arbitrary bytes.
    except Exception as exc:
        raise MalformedDocument(f"unparseable document: {exc}") from None
    if root.tag != MESSAGE_ROOT:
        raise MalformedDocument(f"unexpected root element: {root.tag!r}")
    if root.get("v") != WIRE_VERSION:
        raise MalformedDocument(f"unsupported version: {root.get('v')!r}")

    fields: dict[str, str] = {}
    for child in root:
        if child.tag not in _MESSAGE_FIELDS or child.tag in fields:
            raise MalformedDocument(f"unexpected element: {child.tag!r}")
        fields[child.tag] = child.text or ""
    missing = [f for f in _MESSAGE_FIELDS if f not in fields]
    if missing:
        raise MalformedDocument(f"missing elements: {missing}")

    try:
        payload = base64.b64decode(fields["payload"], validate=True)
    except Exception:
        raise MalformedDocument("payload is not valid base64") from None

    msg = EmergencyMessage(
        msg_id=_int_field(fields, "msg_id"),
        src=NodeId.parse(fields["src"]),
        dst=NodeId.parse(fields["dst"]),
        priority=_int_field(fields, "priority"),
        payload=payload,
        sender_load=_int_field(fields, "sender_load"),
        hop_count=_int_field(fields, "hop_count"),
        created_at=_int_field(fields, "created_at"),
    )
    msg.validate()
    return msg


def classify_packet(data: bytes) -> PacketKind:
    """Total classification of arbitrary bytes; never raises."""
    if data.startswith(CONTROL_MAGIC):
        return PacketKind.CONTROL
    try:
        decode_message(data)
    except (MalformedDocument, InvariantViolation):
        return PacketKind.OTHER
    return PacketKind.EMERGENCY


# --- live-mode framing -------------------------------------------------------

_LEN_STRUCT = struct.Struct(">I")


def frame(payload: bytes) -> bytes:
    """Length-prefix a document for stream transport."""
    return _LEN_STRUCT.pack(len(payload)) + payload


def send_framed(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(frame(payload))


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def recv_framed(sock: socket.socket) -> Optional[bytes]:
    """Read one frame; None on clean EOF."""
    header = _recv_exact(sock, _LEN_STRUCT.size)
    if header is None:
        return None
    (length,) = _LEN_STRUCT.unpack(header)
    return _recv_exact(sock, length)


def iter_frames(sock: socket.socket) -> Iterator[bytes]:
    while True:
        payload = recv_framed(sock)
        if payload is None:
            return
        yield payload


class FrameServer:
    """Minimal live-mode TCP listener: one callback per received frame.

    Defaults to port 33333; tests bind port 0 for an ephemeral port.
    """

    def __init__(self, handler: Callable[[bytes], None],
                 host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        self._handler = handler
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._stopped = threading.Event()

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def start(self) -> "FrameServer":
        self._thread.start()
        return self

    def _serve(self) -> None:
        while not self._stopped.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            with conn:
                for payload in iter_frames(conn):
                    self._handler(payload)

    def close(self) -> None:
        self._stopped.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
