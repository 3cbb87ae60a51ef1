"""Backend service: holds live objects and runs their methods in place.

Calls on an object that lives elsewhere are answered with a redirect naming
the right backend; backends never proxy calls for clients.
"""

from __future__ import annotations

import argparse
import importlib
import logging
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import (
    BackendUnavailable, ClassNotRegistered, ObjectNotFound, Redirect,
    RemoteExecutionError, SchemaViolation, StoreError, TransferFailed, TransportError,
)
from .metadata import HEARTBEAT_INTERVAL, BackendInfo, ObjectLocation, serve_forever
from .protocol import Connection, Message, MessageType
from .registry import SCHEMA_VERSION, ClassDescriptor, Registry, StateAccess
from .rss import RssSampler
from .server import FrameServer
from .values import ObjectId, conforms, new_object_id, pairs, unpairs

log = logging.getLogger(__name__)


@dataclass
class ObjectSlot:
    object_id: ObjectId
    class_name: str
    attributes: dict[str, Any]
    call_stats: list[tuple[str, float]] = field(default_factory=list)
    resident: bool = True
    replica: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)


class ObjectState(StateAccess):
    """The live object as seen by an active method.

    Attribute reads and writes go straight to the slot; writes are checked
    against the class schema.
    """

    def __init__(self, slot: ObjectSlot, desc: ClassDescriptor, context: BackendContext):
        self._slot = slot
        self._desc = desc
        self.context = context

    @property
    def object_id(self) -> ObjectId:
        return self._slot.object_id

    @property
    def class_name(self) -> str:
        return self._slot.class_name

    def __getitem__(self, name: str) -> Any:
        try:
            return self._slot.attributes[name]
        except KeyError:
            raise SchemaViolation(f"{self.class_name} has no attribute {name!r}") from None

    def __setitem__(self, name: str, value: Any) -> None:
        self._desc.check_attribute(name, value)
        self._slot.attributes[name] = value


class BackendContext:
    """What an active method may do beyond touching its own attributes."""

    def __init__(self, backend: BackendService):
        self._backend = backend

    @property
    def backend_id(self) -> int:
        return self._backend.backend_id

    def create(self, class_name: str, attributes: dict[str, Any]) -> ObjectId:
        """Make a new persistent object on this backend."""
        oid = new_object_id()
        return self._backend.store_object(class_name, oid, attributes)

    def call(self, object_id: ObjectId, method: str, args: list | None = None) -> Any:
        """Invoke a method on any object; local objects skip the network."""
        return self._backend.call_anywhere(object_id, method, list(args or []))


class BackendService:
    def __init__(self, registry: Registry, metadata_address: str, host: str = "127.0.0.1",
                 port: int = 0, label: str = "", throttle: float = 1.0,
                 heartbeat_interval: float = HEARTBEAT_INTERVAL):
        if throttle < 1.0:
            raise ValueError("throttle factor must be >= 1")
        self.registry = registry
        self.metadata_address = metadata_address
        self.label = label
        self.throttle = throttle
        self.heartbeat_interval = heartbeat_interval
        self.backend_id = 0
        self.started = time.monotonic()
        self.server = FrameServer(self.handle, host, port, node_id=lambda: self.backend_id)
        self.sampler = RssSampler()
        self.context = BackendContext(self)
        self._objects: dict[ObjectId, ObjectSlot] = {}
        self._lock = threading.Lock()
        self._method_time: dict[str, float] = {}
        self._calls = 0
        self._peers: dict[int, Connection] = {}
        self._peers_lock = threading.Lock()
        self._peer_sent = 0
        self._peer_received = 0
        self._peer_frames = 0
        self._metadata: Connection | None = None
        self._stop = threading.Event()
        self._heartbeat_thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        return self.server.address

    # -- lifecycle --

    def start(self) -> BackendService:
        self.server.start()
        self.sampler.start()
        self._metadata = Connection.open(self.metadata_address)
        self.backend_id = self._metadata.call(MessageType.REGISTER_BACKEND,
                                              [self.address, self.label])[0]
        for desc in self.registry.descriptors():
            self._metadata.call(MessageType.REGISTER_CLASS, [desc.to_value()])
        self._heartbeat_thread = threading.Thread(target=self._heartbeat, daemon=True,
                                                  name=f"heartbeat-{self.backend_id}")
        self._heartbeat_thread.start()
        return self

    def _heartbeat(self) -> None:
        while not self._stop.wait(self.heartbeat_interval):
            try:
                self._metadata.call(MessageType.HEARTBEAT, [self.backend_id])
            except StoreError as exc:
                log.warning("heartbeat failed: %s", exc)

    def stop(self) -> None:
        self._stop.set()
        self.server.stop()
        self.sampler.stop()
        with self._peers_lock:
            peers, self._peers = list(self._peers.values()), {}
        for c in peers:
            c.close()
        if self._metadata is not None:
            self._metadata.close()

    # -- metadata helpers --

    def _lookup(self, object_id: ObjectId) -> ObjectLocation:
        return ObjectLocation.from_value(self._metadata.call(MessageType.LOOKUP, [object_id])[0])

    def _place(self, loc: ObjectLocation) -> None:
        self._metadata.call(MessageType.PLACE, [loc.to_value()])

    def _backend_info(self, backend_id: int) -> BackendInfo:
        for v in self._metadata.call(MessageType.LIST_BACKENDS)[0]:
            info = BackendInfo.from_value(v)
            if info.backend_id == backend_id:
                return info
        raise BackendUnavailable(f"backend {backend_id} is not registered")

    def _peer(self, backend_id: int) -> Connection:
        with self._peers_lock:
            conn = self._peers.get(backend_id)
        if conn is None:
            info = self._backend_info(backend_id)
            conn = Connection.open(info.address)
            with self._peers_lock:
                existing = self._peers.setdefault(backend_id, conn)
            if existing is not conn:
                conn.close()
                conn = existing
        return conn

    def _peer_request(self, backend_id: int, msg_type: int, fields: list) -> list:
        conn = self._peer(backend_id)
        try:
            ex = conn.request(msg_type, fields)
        except TransportError:
            with self._peers_lock:
                if self._peers.get(backend_id) is conn:
                    del self._peers[backend_id]
            raise
        except StoreError as err:
            self._count_peer(getattr(err, "exchange", None))
            raise
        self._count_peer(ex)
        return ex.response.fields

    def _count_peer(self, ex) -> None:
        if ex is None:
            return
        with self._lock:
            self._peer_sent += ex.bytes_sent
            self._peer_received += ex.bytes_received
            self._peer_frames += 2

    def _check_refs(self, values: Iterable[Any]) -> None:
        for v in values:
            if isinstance(v, ObjectId):
                self._lookup(v)
            elif isinstance(v, list):
                self._check_refs(v)

    # -- object table --

    def _slot(self, object_id: ObjectId, write: bool) -> ObjectSlot:
        """Resident slot, or raise a redirect to wherever the object lives."""
        with self._lock:
            slot = self._objects.get(object_id)
        if slot is not None and slot.resident and not (write and slot.replica):
            return slot
        loc = self._lookup(object_id)
        if loc.primary_backend == self.backend_id:
            raise ObjectNotFound(f"object {object_id} is placed here but not resident")
        raise Redirect(f"object {object_id} lives on backend {loc.primary_backend}",
                       target_backend=loc.primary_backend)

    def store_object(self, class_name: str, object_id: ObjectId, attributes: dict[str, Any],
                     schema_version: int = SCHEMA_VERSION) -> ObjectId:
        if not self.registry.is_executable(class_name):
            raise ClassNotRegistered(f"class {class_name!r} is not registered on this backend")
        if schema_version != SCHEMA_VERSION:
            raise SchemaViolation(f"unsupported schema version {schema_version}")
        desc = self.registry.describe(class_name)
        desc.check_attributes(attributes)
        self._check_refs(attributes.values())
        with self._lock:
            if object_id in self._objects:
                raise SchemaViolation(f"object {object_id} already stored here")
            self._objects[object_id] = ObjectSlot(object_id, class_name, dict(attributes))
        try:
            self._place(ObjectLocation(object_id, class_name, self.backend_id))
        except StoreError:
            with self._lock:
                del self._objects[object_id]
            raise
        return object_id

    def call_active_method(self, object_id: ObjectId, method: str,
                           args: list) -> tuple[Any, float]:
        slot = self._slot(object_id, write=True)
        desc = self.registry.describe(slot.class_name)
        mdesc = desc.method(method)
        mdesc.check_args(args)
        impl = self.registry.implementation(slot.class_name, method)
        with slot.lock:
            if not slot.resident:
                return self.call_active_method(object_id, method, args)
            state = ObjectState(slot, desc, self.context)
            t0 = time.perf_counter()
            try:
                result = impl(state, *args)
            except StoreError:
                raise
            except Exception as exc:
                raise RemoteExecutionError(f"{slot.class_name}.{method} failed: "
                                           f"{type(exc).__name__}: {exc}") from exc
            if self.throttle > 1.0:
                time.sleep((self.throttle - 1.0) * (time.perf_counter() - t0))
            elapsed = time.perf_counter() - t0
            slot.call_stats.append((method, elapsed))
        if not conforms(result, mdesc.return_kind):
            raise RemoteExecutionError(f"{slot.class_name}.{method} returned a "
                                       f"non-{mdesc.return_kind.value} value")
        key = f"{slot.class_name}.{method}"
        with self._lock:
            self._method_time[key] = self._method_time.get(key, 0.0) + elapsed
            self._calls += 1
        return result, elapsed

    def call_anywhere(self, object_id: ObjectId, method: str, args: list) -> Any:
        with self._lock:
            slot = self._objects.get(object_id)
        if slot is not None and slot.resident and not slot.replica:
            return self.call_active_method(object_id, method, args)[0]
        target = self._lookup(object_id).primary_backend
        try:
            return self._peer_request(target, MessageType.CALL, [object_id, method, args])[0]
        except Redirect as r:
            return self._peer_request(r.target_backend, MessageType.CALL,
                                      [object_id, method, args])[0]

    def get_attribute(self, object_id: ObjectId, name: str) -> Any:
        slot = self._slot(object_id, write=False)
        with slot.lock:
            if name not in slot.attributes:
                raise SchemaViolation(f"{slot.class_name} has no attribute {name!r}")
            return slot.attributes[name]

    def set_attribute(self, object_id: ObjectId, name: str, value: Any) -> None:
        slot = self._slot(object_id, write=True)
        desc = self.registry.describe(slot.class_name)
        desc.check_attribute(name, value)
        self._check_refs([value])
        with slot.lock:
            slot.attributes[name] = value

    def _transfer(self, object_id: ObjectId, target: int, replica: bool) -> None:
        if target == self.backend_id:
            return
        slot = self._slot(object_id, write=True)
        with slot.lock:
            loc = self._lookup(object_id)
            fields = [slot.class_name, object_id, pairs(slot.attributes), SCHEMA_VERSION, replica]
            try:
                self._peer_request(target, MessageType.FETCH_OBJECT, fields)
            except (TransportError, BackendUnavailable) as exc:
                raise TransferFailed(f"cannot transfer {object_id} to backend {target}: "
                                     f"{exc.message}") from None
            if replica:
                self._place(ObjectLocation(object_id, slot.class_name, self.backend_id,
                                           loc.replicas | {target}))
            else:
                self._place(ObjectLocation(object_id, slot.class_name, target,
                                           loc.replicas - {target}))
                slot.resident = False
                with self._lock:
                    del self._objects[object_id]

    def move_object(self, object_id: ObjectId, target: int) -> None:
        self._transfer(object_id, target, replica=False)

    def replicate_object(self, object_id: ObjectId, target: int) -> None:
        self._transfer(object_id, target, replica=True)

    def receive_object(self, class_name: str, object_id: ObjectId, attributes: dict[str, Any],
                       replica: bool) -> None:
        if class_name not in self.registry:
            raise ClassNotRegistered(f"class {class_name!r} is not registered on this backend")
        self.registry.describe(class_name).check_attributes(attributes)
        with self._lock:
            self._objects[object_id] = ObjectSlot(object_id, class_name, dict(attributes),
                                                  replica=replica)

    # -- metrics --

    def metrics(self, reset_peak: bool = False) -> dict[str, Any]:
        with self._lock:
            m = {
                "backend_id": self.backend_id,
                "label": self.label,
                "resident_object_count": sum(1 for s in self._objects.values() if s.resident),
                "peak_rss_bytes": self.sampler.peak,
                "current_rss_bytes": self.sampler.sample(),
                "method_seconds": pairs(dict(sorted(self._method_time.items()))),
                "calls": self._calls,
                "bytes_in": self.server.bytes_in,
                "bytes_out": self.server.bytes_out,
                "frames_in": self.server.frames_in,
                "frames_out": self.server.frames_out,
                "peer_bytes_sent": self._peer_sent,
                "peer_bytes_received": self._peer_received,
                "peer_frames": self._peer_frames,
            }
        m["peak_rss_bytes"] = max(m["peak_rss_bytes"], m["current_rss_bytes"])
        if reset_peak:
            self.sampler.reset()
        return m

    # -- wire dispatch --

    def handle(self, msg: Message) -> list:
        t = msg.msg_type
        f = msg.fields
        if t == MessageType.CALL:
            result, elapsed = self.call_active_method(f[0], f[1], f[2])
            return [result, elapsed]
        if t == MessageType.GET_ATTR:
            return [self.get_attribute(f[0], f[1])]
        if t == MessageType.SET_ATTR:
            self.set_attribute(f[0], f[1], f[2])
            return []
        if t == MessageType.STORE:
            return [self.store_object(f[0], f[1], unpairs(f[2]), f[3])]
        if t == MessageType.MOVE:
            self.move_object(f[0], f[1])
            return []
        if t == MessageType.REPLICATE:
            self.replicate_object(f[0], f[1])
            return []
        if t == MessageType.FETCH_OBJECT:
            if f[3] != SCHEMA_VERSION:
                raise SchemaViolation(f"unsupported schema version {f[3]}")
            self.receive_object(f[0], f[1], unpairs(f[2]), f[4])
            return []
        if t == MessageType.HEALTH:
            return [time.monotonic() - self.started, self.backend_id]
        if t == MessageType.METRICS:
            return [pairs(self.metrics(f[0]))]
        raise SchemaViolation(f"backend does not handle message type {t}")


def load_modules(registry: Registry, modules: Iterable[str]) -> None:
    """Import workload modules and let each ``register(registry)`` its classes."""
    for name in modules:
        mod = importlib.import_module(name)
        register = getattr(mod, "register", None)
        if register is not None:
            register(registry)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="aostore-backend", description=__doc__.splitlines()[0])
    ap.add_argument("--metadata", required=True, help="metadata service host:port")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=0)
    ap.add_argument("--label", default="")
    ap.add_argument("--throttle", type=float, default=1.0,
                    help="slow-down factor applied to every active method")
    ap.add_argument("--heartbeat-interval", type=float, default=HEARTBEAT_INTERVAL)
    ap.add_argument("--load", action="append", default=None,
                    help="module registering classes (repeatable)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    registry = Registry()
    load_modules(registry, args.load or ["aostore.workloads"])
    backend = BackendService(registry, args.metadata, args.host, args.port, args.label,
                             args.throttle, args.heartbeat_interval).start()
    serve_forever(backend)
    return 0


if __name__ == "__main__":
    sys.exit(main())
