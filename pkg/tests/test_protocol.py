from __future__ import annotations

import socket
import struct
import threading
import time
import uuid

import pytest
from hypothesis import given, settings

from aostore.errors import (DecodeError, FrameTooLarge, ProtocolMismatch, SchemaViolation,
                            UnsupportedMessage)
from aostore.protocol import (HEADER_SIZE, MAGIC, MAX_PAYLOAD, Connection, Message, MessageType,
                              decode_frame, encode_frame, frame_size, parse_header, read_frame)
from aostore.server import FrameServer
from aostore.values import FloatArray

from strategies import error_messages, messages


def header(length: int, msg_type: int, rid: int = 1, magic: bytes = MAGIC) -> bytes:
    return struct.pack(">4sIBQ", magic, length, msg_type, rid)


def test_health_request_is_seventeen_bytes():
    frame = encode_frame(Message(MessageType.HEALTH, 7))
    assert len(frame) == HEADER_SIZE == 17
    assert frame == header(0, 8, 7)


@given(messages())
@settings(max_examples=300, deadline=None)
def test_frame_round_trip(msg):
    data = encode_frame(msg)
    assert len(data) == frame_size(msg)
    assert decode_frame(data) == msg


@given(error_messages())
def test_error_frame_round_trip(msg):
    assert decode_frame(encode_frame(msg)) == msg


def test_header_errors():
    with pytest.raises(ProtocolMismatch):
        parse_header(header(0, 8, magic=b"XXXX"))
    with pytest.raises(FrameTooLarge):
        parse_header(header(MAX_PAYLOAD + 1, 2))
    with pytest.raises(UnsupportedMessage):
        parse_header(header(0, 0x42))
    with pytest.raises(DecodeError):
        parse_header(b"AOS1")


def test_length_mismatch_and_schema_checks():
    data = encode_frame(Message(MessageType.MOVE, 1, [uuid.uuid4(), 3]))
    with pytest.raises(DecodeError):
        decode_frame(data + b"\x00")
    with pytest.raises(DecodeError):
        decode_frame(data[:-1])
    with pytest.raises(SchemaViolation):
        encode_frame(Message(MessageType.MOVE, 1, [uuid.uuid4()]))
    with pytest.raises(SchemaViolation):
        encode_frame(Message(MessageType.MOVE, 1, ["not-a-ref", 3]))


# -- live server --------------------------------------------------------------


def sleepy_handler(msg: Message) -> list:
    """CALL handler whose first argument is a delay; echoes the method name."""
    if msg.msg_type == MessageType.HEALTH:
        return [0.0, 0]
    _, method, args = msg.fields
    time.sleep(args[0])
    return [method, float(args[0])]


@pytest.fixture
def server():
    s = FrameServer(sleepy_handler).start()
    yield s
    s.stop()


def raw_socket(address: str) -> socket.socket:
    host, _, port = address.rpartition(":")
    s = socket.create_connection((host, int(port)), timeout=5)
    return s


def test_bad_magic_closes_connection(server):
    s = raw_socket(server.address)
    s.sendall(header(0, 8, magic=b"HTTP"))
    assert s.recv(100) == b""
    s.close()


@pytest.mark.parametrize("bad, code", [
    (header(MAX_PAYLOAD + 1, 2, rid=9), "frame-too-large"),
    (header(0, 0x42, rid=9), "unsupported-message"),
])
def test_bad_header_gets_error_then_close(server, bad, code):
    s = raw_socket(server.address)
    s.sendall(bad)
    reply, _ = read_frame(s)
    assert reply.msg_type == MessageType.ERROR
    assert reply.request_id == 9
    assert reply.fields[0] == code
    assert s.recv(100) == b""
    s.close()


def test_byte_counters_match_encodings(server):
    conn = Connection.open(server.address)
    try:
        ex = conn.request(MessageType.CALL, [uuid.uuid4(), "m", [0.0]])
        assert ex.bytes_sent == len(encode_frame(Message(MessageType.CALL, 1,
                                                         [uuid.uuid4(), "m", [0.0]])))
        assert ex.bytes_received == frame_size(ex.response)
        assert conn.bytes_sent == ex.bytes_sent and conn.frames_sent == 1
        health = conn.request(MessageType.HEALTH)
        assert health.bytes_sent == 17
    finally:
        conn.close()


def test_multiplexed_requests_complete_out_of_order(server):
    conn = Connection.open(server.address)
    finished: list[str] = []
    results: dict[str, list] = {}

    def go(name: str, delay: float):
        results[name] = conn.call(MessageType.CALL, [uuid.uuid4(), name, [delay]])
        finished.append(name)

    slow = threading.Thread(target=go, args=("slow", 0.4))
    slow.start()
    time.sleep(0.05)
    go("fast", 0.0)
    slow.join()
    conn.close()
    assert finished == ["fast", "slow"]
    assert results == {"slow": ["slow", 0.4], "fast": ["fast", 0.0]}


class Tap:
    """TCP relay that counts the bytes crossing it in each direction."""

    def __init__(self, target: str):
        self.target = target
        self.up = 0
        self.down = 0
        self.listener = socket.socket()
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen()
        self.address = "127.0.0.1:%d" % self.listener.getsockname()[1]
        self._lock = threading.Lock()
        threading.Thread(target=self._accept, daemon=True).start()

    def _accept(self):
        while True:
            try:
                client, _ = self.listener.accept()
            except OSError:
                return
            upstream = raw_socket(self.target)
            upstream.settimeout(None)
            threading.Thread(target=self._pump, args=(client, upstream, "up"), daemon=True).start()
            threading.Thread(target=self._pump, args=(upstream, client, "down"), daemon=True).start()

    def _pump(self, src, dst, direction):
        try:
            while True:
                data = src.recv(65536)
                if not data:
                    break
                with self._lock:
                    setattr(self, direction, getattr(self, direction) + len(data))
                dst.sendall(data)
        except OSError:
            pass
        finally:
            try:
                dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    def close(self):
        self.listener.close()


def test_counters_agree_with_independent_tap(server):
    tap = Tap(server.address)
    conn = Connection.open(tap.address)
    try:
        payload = FloatArray.from_values((1000,), range(1000))
        ex1 = conn.request(MessageType.CALL, [uuid.uuid4(), "x" * 50, [0.0, payload]])
        ex2 = conn.request(MessageType.HEALTH)
        deadline = time.time() + 2
        while tap.down < ex1.bytes_received + ex2.bytes_received and time.time() < deadline:
            time.sleep(0.01)
        assert tap.up == ex1.bytes_sent + ex2.bytes_sent == conn.bytes_sent
        assert tap.down == ex1.bytes_received + ex2.bytes_received == conn.bytes_received
    finally:
        conn.close()
        tap.close()
