"""Threaded frame server shared by the metadata and backend services."""

from __future__ import annotations

import logging
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

from .errors import ProtocolMismatch, StoreError, TransportError
from .protocol import (
    HEADER, HEADER_SIZE, Message, encode_frame, error_message, parse_header,
    decode_payload, recv_exact, response_type,
)

log = logging.getLogger(__name__)

Handler = Callable[[Message], list]


class FrameServer:
    """Accepts connections and dispatches each request to ``handler``.

    Requests on one connection may run concurrently; response frames are
    written whole under a per-connection lock.  The handler returns the
    success-response fields or raises :class:`StoreError`.
    """

    def __init__(self, handler: Handler, host: str = "127.0.0.1", port: int = 0,
                 workers: int = 32, node_id: Callable[[], int | None] = lambda: None):
        self.handler = handler
        self.node_id = node_id
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(128)
        self.host, self.port = self._sock.getsockname()[:2]
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="srv")
        self._conns: set[socket.socket] = set()
        self._lock = threading.Lock()
        self._stopped = threading.Event()
        self.bytes_in = 0
        self.bytes_out = 0
        self.frames_in = 0
        self.frames_out = 0
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True,
                                               name=f"accept-{self.port}")

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def start(self) -> FrameServer:
        self._accept_thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._stopped.is_set():
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket) -> None:
        write_lock = threading.Lock()
        try:
            while not self._stopped.is_set():
                header = bytes(recv_exact(conn, HEADER_SIZE))
                try:
                    length, msg_type, rid = parse_header(header)
                except ProtocolMismatch:
                    log.warning("closing connection after bad magic")
                    return
                except StoreError as err:
                    # the stream cannot be resynchronised after a bad header
                    rid = HEADER.unpack_from(header)[3]
                    self._reply(conn, write_lock, error_message(rid, err))
                    return
                payload = recv_exact(conn, length) if length else b""
                with self._lock:
                    self.bytes_in += HEADER_SIZE + length
                    self.frames_in += 1
                self._pool.submit(self._dispatch, conn, write_lock, msg_type, rid, payload)
        except (TransportError, OSError):
            pass
        finally:
            with self._lock:
                self._conns.discard(conn)
            conn.close()

    def _dispatch(self, conn, write_lock, msg_type, rid, payload) -> None:
        try:
            if msg_type & 0x80:
                raise ProtocolMismatch(f"unexpected response frame type {msg_type:#x}")
            msg = decode_payload(msg_type, rid, payload)
            fields = self.handler(msg)
            reply = Message(response_type(msg_type), rid, fields)
            frame = encode_frame(reply)
        except StoreError as err:
            if err.backend_id is None:
                err.backend_id = self.node_id()
            frame = encode_frame(error_message(rid, err))
        except Exception as exc:  # noqa: BLE001 - reported to the caller, not swallowed
            log.exception("handler failure")
            err = StoreError(f"{type(exc).__name__}: {exc}", backend_id=self.node_id())
            frame = encode_frame(error_message(rid, err))
        self._send(conn, write_lock, frame)

    def _reply(self, conn, write_lock, msg: Message) -> None:
        self._send(conn, write_lock, encode_frame(msg))

    def _send(self, conn, write_lock, frame: bytes) -> None:
        try:
            with write_lock:
                # counted before sending so a peer that already holds the reply
                # never reads a stale counter
                with self._lock:
                    self.bytes_out += len(frame)
                    self.frames_out += 1
                conn.sendall(frame)
        except OSError:
            pass

    def stop(self) -> None:
        self._stopped.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            c.close()
        self._pool.shutdown(wait=False, cancel_futures=True)
