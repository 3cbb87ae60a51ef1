"""Metadata service: backend directory, object placement and liveness.

A single authority holds the placement of every persistent object.  Placement
is only ever changed explicitly (store, move, replicate); nothing here decides
where objects go.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import AlreadyRegistered, BackendUnavailable, ObjectNotFound, SchemaViolation, StoreError
from .protocol import Connection, Message, MessageType
from .registry import ClassDescriptor, Registry
from .server import FrameServer
from .values import ObjectId, deserialize_value, serialize_value

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL = 2.0
SUSPECT_AFTER = 3  # missed heartbeats


@dataclass
class BackendInfo:
    backend_id: int
    address: str
    label: str = ""
    last_heartbeat: float = 0.0
    suspect: bool = False

    def to_value(self) -> list:
        return [self.backend_id, self.address, self.label, self.last_heartbeat,
                "suspect" if self.suspect else "alive"]

    @classmethod
    def from_value(cls, v: list) -> BackendInfo:
        bid, address, label, hb, status = v
        return cls(bid, address, label, hb, status == "suspect")


@dataclass
class ObjectLocation:
    object_id: ObjectId
    class_name: str
    primary_backend: int
    replicas: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        self.replicas = frozenset(self.replicas) - {self.primary_backend}

    def to_value(self) -> list:
        return [self.object_id, self.class_name, self.primary_backend, sorted(self.replicas)]

    @classmethod
    def from_value(cls, v: list) -> ObjectLocation:
        oid, cname, primary, replicas = v
        return cls(oid, cname, primary, frozenset(replicas))


class MetadataState:
    """In-memory directory; every method is safe to call from many threads."""

    def __init__(self, clock: Callable[[], float] = time.monotonic,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL,
                 suspect_after: int = SUSPECT_AFTER):
        self.clock = clock
        self.heartbeat_interval = heartbeat_interval
        self.suspect_after = suspect_after
        self.classes = Registry()
        self._lock = threading.RLock()
        self._backends: dict[int, BackendInfo] = {}
        self._locations: dict[ObjectId, ObjectLocation] = {}
        self._next_id = 1

    # -- backends --

    def register_backend(self, address: str, label: str = "") -> int:
        with self._lock:
            for info in self._backends.values():
                if info.address == address:
                    self._refresh(info)
                    if not info.suspect:
                        raise AlreadyRegistered(f"address {address} already registered")
                    # a restarted backend rejoins under its old id
                    info.label = label
                    info.last_heartbeat = self.clock()
                    info.suspect = False
                    return info.backend_id
            bid = self._next_id
            self._next_id += 1
            self._backends[bid] = BackendInfo(bid, address, label, self.clock())
            return bid

    def heartbeat(self, backend_id: int) -> None:
        with self._lock:
            info = self._backend(backend_id)
            info.last_heartbeat = self.clock()
            info.suspect = False

    def mark(self, backend_id: int, alive: bool) -> None:
        with self._lock:
            info = self._backend(backend_id)
            info.suspect = not alive
            if alive:
                info.last_heartbeat = self.clock()

    def _refresh(self, info: BackendInfo) -> None:
        if self.clock() - info.last_heartbeat > self.suspect_after * self.heartbeat_interval:
            info.suspect = True

    def _backend(self, backend_id: int) -> BackendInfo:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise BackendUnavailable(f"backend {backend_id} is not registered") from None

    def backend(self, backend_id: int) -> BackendInfo:
        with self._lock:
            info = self._backend(backend_id)
            self._refresh(info)
            return BackendInfo(**vars(info))

    def list_backends(self) -> list[BackendInfo]:
        with self._lock:
            for info in self._backends.values():
                self._refresh(info)
            return [BackendInfo(**vars(self._backends[b])) for b in sorted(self._backends)]

    # -- placement --

    def record_placement(self, loc: ObjectLocation) -> None:
        with self._lock:
            for b in {loc.primary_backend, *loc.replicas}:
                if b not in self._backends:
                    raise BackendUnavailable(f"location references unregistered backend {b}")
            self._locations[loc.object_id] = loc

    def lookup_object(self, object_id: ObjectId) -> ObjectLocation:
        with self._lock:
            try:
                return self._locations[object_id]
            except KeyError:
                raise ObjectNotFound(f"object {object_id} is not known") from None

    def locations(self) -> list[ObjectLocation]:
        with self._lock:
            return list(self._locations.values())

    # -- snapshots --

    def save_snapshot(self, path: str | Path) -> None:
        data = serialize_value([loc.to_value() for loc in self.locations()])
        Path(path).write_bytes(data)

    def load_snapshot(self, path: str | Path) -> int:
        items = deserialize_value(Path(path).read_bytes())
        with self._lock:
            for v in items:
                loc = ObjectLocation.from_value(v)
                self._locations[loc.object_id] = loc
        return len(items)


class MetadataService:
    """Wire front-end for :class:`MetadataState`."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 state: MetadataState | None = None):
        self.state = state or MetadataState()
        self.started = time.monotonic()
        self.server = FrameServer(self.handle, host, port, node_id=lambda: 0)

    @property
    def address(self) -> str:
        return self.server.address

    def start(self) -> MetadataService:
        self.server.start()
        return self

    def stop(self) -> None:
        self.server.stop()

    def handle(self, msg: Message) -> list:
        t = msg.msg_type
        f = msg.fields
        st = self.state
        if t == MessageType.HEALTH:
            return [time.monotonic() - self.started, 0]
        if t == MessageType.REGISTER_BACKEND:
            return [st.register_backend(f[0], f[1])]
        if t == MessageType.HEARTBEAT:
            st.heartbeat(f[0])
            return []
        if t == MessageType.LIST_BACKENDS:
            return [[b.to_value() for b in st.list_backends()]]
        if t == MessageType.LOOKUP:
            return [st.lookup_object(f[0]).to_value()]
        if t == MessageType.PLACE:
            st.record_placement(ObjectLocation.from_value(f[0]))
            return []
        if t == MessageType.REGISTER_CLASS:
            st.classes.register_class(ClassDescriptor.from_value(f[0]))
            return []
        if t == MessageType.DESCRIBE:
            return [st.classes.describe(f[0]).to_value()]
        raise SchemaViolation(f"metadata service does not handle message type {t}")

    def health_sweep(self, timeout: float = 1.0) -> dict[int, str]:
        """Ping every backend once; unreachable ones are marked suspect.

        Nothing is re-placed: the report is informational.
        """
        report = {}
        for info in self.state.list_backends():
            alive = ping(info.address, timeout)
            self.state.mark(info.backend_id, alive)
            report[info.backend_id] = "alive" if alive else "suspect"
        return report


def ping(address: str, timeout: float = 1.0) -> bool:
    try:
        conn = Connection.open(address, timeout=timeout)
    except StoreError:
        return False
    try:
        conn.request(MessageType.HEALTH, [], timeout=timeout)
        return True
    except StoreError:
        return False
    finally:
        conn.close()


def serve_forever(service, on_stop: Callable[[], None] | None = None) -> None:
    """Announce the listening address on stdout, then run until SIGTERM/SIGINT."""
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    print(f"READY {service.address}", flush=True)
    stop.wait()
    service.stop()
    if on_stop:
        on_stop()


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="aostore-metadata", description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    ap.add_argument("--heartbeat-interval", type=float, default=HEARTBEAT_INTERVAL)
    ap.add_argument("--snapshot", help="write placements here on shutdown")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    state = MetadataState(heartbeat_interval=args.heartbeat_interval)
    if args.snapshot and Path(args.snapshot).exists():
        state.load_snapshot(args.snapshot)
    service = MetadataService(args.host, args.port, state).start()
    serve_forever(service, (lambda: state.save_snapshot(args.snapshot)) if args.snapshot else None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
