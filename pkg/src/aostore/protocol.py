"""Length-prefixed binary frames and the synchronous request/response path.

Frame layout (big-endian)::

    magic "AOS1" | u32 payload length | u8 msg_type | u64 request_id | payload

The payload is the concatenation of the message's field values in canonical
value encoding; an empty field list means an empty payload.
"""

from __future__ import annotations

import enum
import itertools
import socket
import struct
import threading
import time
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from typing import Any

from .errors import (
    DecodeError, FrameTooLarge, ProtocolMismatch, SchemaViolation, StoreError,
    TransportError, UnsupportedMessage, rebuild_error,
)
from .values import Kind, conforms, decode_value_at, encoded_size, serialize_value

MAGIC = b"AOS1"
HEADER = struct.Struct(">4sIBQ")
HEADER_SIZE = HEADER.size  # 17
MAX_PAYLOAD = 256 * 1024 * 1024
RESPONSE_BIT = 0x80


class MessageType(enum.IntEnum):
    STORE = 1
    CALL = 2
    GET_ATTR = 3
    SET_ATTR = 4
    MOVE = 5
    REPLICATE = 6
    FETCH_OBJECT = 7
    HEALTH = 8
    METRICS = 9
    REGISTER_BACKEND = 10
    LOOKUP = 11
    # metadata-side extensions
    PLACE = 12
    REGISTER_CLASS = 13
    DESCRIBE = 14
    LIST_BACKENDS = 15
    HEARTBEAT = 16
    ERROR = 0xFF


def response_type(t: int) -> int:
    return t | RESPONSE_BIT


K = Kind
# request fields, success-response fields
SCHEMAS: dict[MessageType, tuple[tuple[Kind, ...], tuple[Kind, ...]]] = {
    MessageType.STORE: ((K.TEXT, K.OBJECT_REF, K.LIST, K.INT), (K.OBJECT_REF,)),
    MessageType.CALL: ((K.OBJECT_REF, K.TEXT, K.LIST), (K.ANY, K.FLOAT)),
    MessageType.GET_ATTR: ((K.OBJECT_REF, K.TEXT), (K.ANY,)),
    MessageType.SET_ATTR: ((K.OBJECT_REF, K.TEXT, K.ANY), ()),
    MessageType.MOVE: ((K.OBJECT_REF, K.INT), ()),
    MessageType.REPLICATE: ((K.OBJECT_REF, K.INT), ()),
    MessageType.FETCH_OBJECT: ((K.TEXT, K.OBJECT_REF, K.LIST, K.INT, K.BOOL), ()),
    MessageType.HEALTH: ((), (K.FLOAT, K.INT)),
    MessageType.METRICS: ((K.BOOL,), (K.LIST,)),
    MessageType.REGISTER_BACKEND: ((K.TEXT, K.TEXT), (K.INT,)),
    MessageType.LOOKUP: ((K.OBJECT_REF,), (K.LIST,)),
    MessageType.PLACE: ((K.LIST,), ()),
    MessageType.REGISTER_CLASS: ((K.LIST,), ()),
    MessageType.DESCRIBE: ((K.TEXT,), (K.LIST,)),
    MessageType.LIST_BACKENDS: ((), (K.LIST,)),
    MessageType.HEARTBEAT: ((K.INT,), ()),
}
ERROR_SCHEMA = (K.TEXT, K.TEXT, K.ANY, K.ANY)  # code, message, backend_id, redirect target

_KNOWN_TYPES = (
    {int(t) for t in SCHEMAS}
    | {response_type(int(t)) for t in SCHEMAS}
    | {int(MessageType.ERROR)}
)


def schema_for(msg_type: int) -> tuple[Kind, ...]:
    if msg_type == MessageType.ERROR:
        return ERROR_SCHEMA
    if msg_type & RESPONSE_BIT:
        return SCHEMAS[MessageType(msg_type & ~RESPONSE_BIT)][1]
    return SCHEMAS[MessageType(msg_type)][0]


@dataclass
class Message:
    msg_type: int
    request_id: int
    fields: list = field(default_factory=list)

    @property
    def is_error(self) -> bool:
        return self.msg_type == MessageType.ERROR

    def raise_if_error(self) -> None:
        if self.is_error:
            code, message, backend_id, target = self.fields
            raise rebuild_error(code, message, backend_id, target)


def _check_fields(msg_type: int, fields: list) -> None:
    kinds = schema_for(msg_type)
    if len(fields) != len(kinds):
        raise SchemaViolation(
            f"message type {msg_type:#x} expects {len(kinds)} field(s), got {len(fields)}"
        )
    for i, (v, k) in enumerate(zip(fields, kinds)):
        if not conforms(v, k):
            raise SchemaViolation(f"message type {msg_type:#x} field {i} must be {k.value}")


def encode_frame(msg: Message) -> bytes:
    if msg.msg_type not in _KNOWN_TYPES:
        raise UnsupportedMessage(f"unknown message type {msg.msg_type:#x}")
    _check_fields(msg.msg_type, msg.fields)
    payload = b"".join(serialize_value(v) for v in msg.fields)
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(MAGIC, len(payload), msg.msg_type, msg.request_id) + payload


def frame_size(msg: Message) -> int:
    """Encoded length of ``msg`` computed from field sizes alone."""
    return HEADER_SIZE + sum(encoded_size(v) for v in msg.fields)


def parse_header(header: bytes) -> tuple[int, int, int]:
    """Validate a 17-byte header; return (payload length, msg_type, request_id)."""
    if len(header) < HEADER_SIZE:
        raise DecodeError(f"truncated frame header ({len(header)} bytes)", len(header))
    magic, length, msg_type, request_id = HEADER.unpack_from(header)
    if magic != MAGIC:
        raise ProtocolMismatch(f"bad magic {magic!r}")
    if length > MAX_PAYLOAD:
        raise FrameTooLarge(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    if msg_type not in _KNOWN_TYPES:
        raise UnsupportedMessage(f"unknown message type {msg_type:#x}")
    return length, msg_type, request_id


def decode_payload(msg_type: int, request_id: int, payload: bytes | memoryview) -> Message:
    mv = memoryview(payload)
    fields = []
    pos = 0
    while pos < len(mv):
        v, pos = decode_value_at(mv, pos)
        fields.append(v)
    msg = Message(msg_type, request_id, fields)
    _check_fields(msg_type, fields)
    return msg


def decode_frame(data: bytes) -> Message:
    length, msg_type, request_id = parse_header(data)
    if len(data) - HEADER_SIZE != length:
        raise DecodeError(
            f"length field says {length} payload bytes, frame carries {len(data) - HEADER_SIZE}",
            4,
        )
    return decode_payload(msg_type, request_id, memoryview(data)[HEADER_SIZE:])


def error_message(request_id: int, err: StoreError) -> Message:
    target = getattr(err, "target_backend", None)
    return Message(MessageType.ERROR, request_id,
                   [err.code, err.message, err.backend_id, target])


# -- socket I/O ---------------------------------------------------------------


def recv_exact(sock: socket.socket, n: int) -> bytearray:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:], n - got)
        if k == 0:
            raise TransportError("connection closed by peer")
        got += k
    return buf


def read_frame(sock: socket.socket) -> tuple[Message, int]:
    """Block until one whole frame arrives; return it and its size in bytes."""
    header = bytes(recv_exact(sock, HEADER_SIZE))
    length, msg_type, request_id = parse_header(header)
    payload = recv_exact(sock, length) if length else b""
    return decode_payload(msg_type, request_id, payload), HEADER_SIZE + length


@dataclass
class Exchange:
    """One completed request/response pair with its wire cost."""

    response: Message
    bytes_sent: int
    bytes_received: int


class Connection:
    """Client end of a stream connection.

    Safe to share between threads: writes are serialized, a reader thread
    routes responses back to their callers by request id, so several
    requests can be in flight at once.
    """

    def __init__(self, sock: socket.socket, latency: float = 0.0, name: str = ""):
        self.sock = sock
        self.latency = latency
        self.name = name
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.frames_received = 0
        self._ids = itertools.count(1)
        self._write_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, Future] = {}
        self._closed: StoreError | None = None
        self._reader = threading.Thread(target=self._read_loop, name=f"conn-reader-{name}",
                                        daemon=True)
        self._reader.start()

    @classmethod
    def open(cls, address: str, latency: float = 0.0, timeout: float = 10.0) -> Connection:
        host, _, port = address.rpartition(":")
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {address}: {exc}") from None
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock, latency=latency, name=address)

    def _read_loop(self) -> None:
        try:
            while True:
                msg, nbytes = read_frame(self.sock)
                with self._state_lock:
                    self.bytes_received += nbytes
                    self.frames_received += 1
                    fut = self._pending.pop(msg.request_id, None)
                if fut is not None:
                    fut.set_result((msg, nbytes))
        except StoreError as exc:
            self._fail_all(exc)
        except OSError as exc:
            self._fail_all(TransportError(f"connection to {self.name} failed: {exc}"))

    def _fail_all(self, err: StoreError) -> None:
        with self._state_lock:
            if self._closed is None:
                self._closed = err
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            fut.set_exception(err)

    def request(self, msg_type: int, fields: list | None = None,
                timeout: float | None = None) -> Exchange:
        """Send one request and block for its response.

        ERROR responses are raised as typed exceptions carrying the
        exchange's byte counts in ``exc.exchange``.
        """
        rid = next(self._ids)
        frame = encode_frame(Message(msg_type, rid, list(fields or [])))
        fut: Future = Future()
        with self._state_lock:
            if self._closed is not None:
                raise TransportError(f"connection to {self.name} is closed: {self._closed.message}")
            self._pending[rid] = fut
        if self.latency:
            time.sleep(self.latency)
        try:
            with self._write_lock:
                self.sock.sendall(frame)
                with self._state_lock:
                    self.bytes_sent += len(frame)
                    self.frames_sent += 1
        except OSError as exc:
            with self._state_lock:
                self._pending.pop(rid, None)
            raise TransportError(f"send to {self.name} failed: {exc}") from None
        try:
            msg, nbytes = fut.result(timeout)
        except FutureTimeout:
            with self._state_lock:
                self._pending.pop(rid, None)
            raise TransportError(f"no response from {self.name} within {timeout}s") from None
        if self.latency:
            time.sleep(self.latency)
        exchange = Exchange(msg, len(frame), nbytes)
        if msg.is_error:
            try:
                msg.raise_if_error()
            except StoreError as err:
                err.exchange = exchange
                raise
        if msg.msg_type != response_type(msg_type):
            raise UnsupportedMessage(
                f"expected response type {response_type(msg_type):#x}, got {msg.msg_type:#x}"
            )
        return exchange

    def call(self, msg_type: int, fields: list | None = None, timeout: float | None = None) -> list:
        return self.request(msg_type, fields, timeout).response.fields

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=1.0)


def request_response(conn: Connection, msg_type: int, fields: list | None = None) -> Exchange:
    return conn.request(msg_type, fields)
