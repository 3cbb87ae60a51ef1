"""Client library: stub handles for persistent objects.

Nothing here imports workload code or numpy.  A client learns class schemas
from the metadata service, so it can create objects and call their methods
without having the implementing module installed::

    session = Session("127.0.0.1:7000")
    Trainer = session.stub("workload.trainer")
    trainer = Trainer(backend="cloud", epochs=100)
    history = trainer.train()
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Any

from .errors import BackendUnavailable, Redirect, StoreError
from .metadata import BackendInfo, ObjectLocation
from .protocol import Connection, Exchange, MessageType
from .registry import SCHEMA_VERSION, ClassDescriptor, Registry
from .values import ObjectId, new_object_id, pairs, unpairs


@dataclass
class CallTiming:
    total_client_seconds: float = 0.0
    server_seconds: float = 0.0
    bytes_sent: int = 0
    bytes_received: int = 0
    redirects: int = 0

    @property
    def overhead_seconds(self) -> float:
        return self.total_client_seconds - self.server_seconds

    def add(self, ex: Exchange | None) -> None:
        if ex is not None:
            self.bytes_sent += ex.bytes_sent
            self.bytes_received += ex.bytes_received


class Session:
    """Connection context shared by every handle created through it.

    Thread-safe.  ``latency`` injects a fixed delay on each direction of
    every request, to emulate a slower network.
    """

    def __init__(self, metadata_address: str, latency: float = 0.0,
                 registry: Registry | None = None):
        self.metadata_address = metadata_address
        self.latency = latency
        self.registry = registry if registry is not None else Registry()
        self._metadata = Connection.open(metadata_address, latency=latency)
        self._conns: dict[int, Connection] = {}
        self._placement: dict[ObjectId, int] = {}
        self._lock = threading.Lock()
        self._local = threading.local()

    def close(self) -> None:
        with self._lock:
            conns, self._conns = list(self._conns.values()), {}
        for c in conns:
            c.close()
        self._metadata.close()

    def __enter__(self) -> Session:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- byte accounting --

    @property
    def bytes_sent(self) -> int:
        return self._metadata.bytes_sent + sum(c.bytes_sent for c in self._connections())

    @property
    def bytes_received(self) -> int:
        return self._metadata.bytes_received + sum(c.bytes_received for c in self._connections())

    @property
    def frames_sent(self) -> int:
        return self._metadata.frames_sent + sum(c.frames_sent for c in self._connections())

    def _connections(self) -> list[Connection]:
        with self._lock:
            return list(self._conns.values())

    @property
    def last_timing(self) -> CallTiming | None:
        """Timing of the most recent call made from the current thread."""
        return getattr(self._local, "timing", None)

    # -- metadata queries --

    def _meta(self, msg_type: int, fields: list, timing: CallTiming | None = None) -> list:
        try:
            ex = self._metadata.request(msg_type, fields)
        except StoreError as err:
            if timing is not None:
                timing.add(getattr(err, "exchange", None))
            raise
        if timing is not None:
            timing.add(ex)
        return ex.response.fields

    def list_backends(self) -> list[BackendInfo]:
        return [BackendInfo.from_value(v) for v in self._meta(MessageType.LIST_BACKENDS, [])[0]]

    def resolve_backend(self, hint: int | str) -> BackendInfo:
        """Find a live backend by id or label; never substitutes another one."""
        for info in self.list_backends():
            if hint in (info.backend_id, info.label, info.address):
                if info.suspect:
                    raise BackendUnavailable(f"backend {hint!r} is not responding")
                return info
        raise BackendUnavailable(f"no backend matches {hint!r}")

    def describe(self, class_name: str) -> ClassDescriptor:
        if class_name not in self.registry:
            desc = ClassDescriptor.from_value(self._meta(MessageType.DESCRIBE, [class_name])[0])
            self.registry.register_class(desc)
        return self.registry.describe(class_name)

    def lookup(self, object_id: ObjectId) -> ObjectLocation:
        return ObjectLocation.from_value(self._meta(MessageType.LOOKUP, [object_id])[0])

    # -- backend connections --

    def _conn(self, backend_id: int) -> Connection:
        with self._lock:
            conn = self._conns.get(backend_id)
        if conn is not None:
            return conn
        info = self.resolve_backend(backend_id)
        conn = Connection.open(info.address, latency=self.latency)
        with self._lock:
            existing = self._conns.setdefault(backend_id, conn)
        if existing is not conn:
            conn.close()
        return existing

    def _where(self, object_id: ObjectId, timing: CallTiming) -> int:
        with self._lock:
            bid = self._placement.get(object_id)
        if bid is None:
            loc = ObjectLocation.from_value(self._meta(MessageType.LOOKUP, [object_id], timing)[0])
            bid = loc.primary_backend
            with self._lock:
                self._placement[object_id] = bid
        return bid

    def _send(self, backend_id: int, msg_type: int, fields: list,
              timing: CallTiming) -> list:
        try:
            ex = self._conn(backend_id).request(msg_type, fields)
        except StoreError as err:
            timing.add(getattr(err, "exchange", None))
            raise
        timing.add(ex)
        return ex.response.fields

    def _routed(self, object_id: ObjectId, msg_type: int, fields: list,
                timing: CallTiming, backend: int | None = None) -> list:
        """Send to the object's backend, following at most one redirect."""
        target = backend if backend is not None else self._where(object_id, timing)
        try:
            return self._send(target, msg_type, fields, timing)
        except Redirect as r:
            timing.redirects += 1
            with self._lock:
                self._placement[object_id] = r.target_backend
            return self._send(r.target_backend, msg_type, fields, timing)

    # -- object operations --

    def make_persistent(self, class_name: str, attributes: dict[str, Any] | None = None,
                        backend: int | str = None) -> StubHandle:
        """Create an object on exactly the hinted backend."""
        desc = self.describe(class_name)
        attrs = {name: None for name, _ in desc.attributes}
        attrs.update(attributes or {})
        desc.check_attributes(attrs)
        timing = CallTiming()
        t0 = time.perf_counter()
        if backend is None:
            raise BackendUnavailable("make_persistent needs a backend hint")
        info = self.resolve_backend(backend)
        oid = new_object_id()
        self._send(info.backend_id, MessageType.STORE,
                   [class_name, oid, pairs(attrs), SCHEMA_VERSION], timing)
        with self._lock:
            self._placement[oid] = info.backend_id
        timing.total_client_seconds = time.perf_counter() - t0
        self._local.timing = timing
        return StubHandle(oid, class_name, desc, self)

    def attach(self, object_id: ObjectId, class_name: str | None = None) -> StubHandle:
        """Handle for an existing object."""
        loc = self.lookup(object_id)
        if class_name is not None and class_name != loc.class_name:
            raise StoreError(f"object {object_id} is a {loc.class_name}, not {class_name}")
        with self._lock:
            self._placement[object_id] = loc.primary_backend
        return StubHandle(object_id, loc.class_name, self.describe(loc.class_name), self)

    def invoke(self, handle: StubHandle, method: str, args: list | tuple = ()) -> tuple[Any, CallTiming]:
        """Run ``method`` next to the object's data and wait for the result."""
        args = list(args)
        handle.descriptor.method(method).check_args(args)
        timing = CallTiming()
        t0 = time.perf_counter()
        result, server = self._routed(handle.object_id, MessageType.CALL,
                                      [handle.object_id, method, args], timing)
        timing.total_client_seconds = time.perf_counter() - t0
        timing.server_seconds = server
        self._local.timing = timing
        return result, timing

    def get_attribute(self, handle: StubHandle, name: str, backend: int | None = None) -> Any:
        """Read an attribute; ``backend`` targets a specific copy (e.g. a replica)."""
        handle.descriptor.check_attribute(name, None)
        timing = CallTiming()
        t0 = time.perf_counter()
        fields = self._routed(handle.object_id, MessageType.GET_ATTR,
                              [handle.object_id, name], timing, backend)
        timing.total_client_seconds = time.perf_counter() - t0
        self._local.timing = timing
        return fields[0]

    def set_attribute(self, handle: StubHandle, name: str, value: Any) -> None:
        handle.descriptor.check_attribute(name, value)
        timing = CallTiming()
        t0 = time.perf_counter()
        self._routed(handle.object_id, MessageType.SET_ATTR, [handle.object_id, name, value], timing)
        timing.total_client_seconds = time.perf_counter() - t0
        self._local.timing = timing

    def move(self, handle: StubHandle, target: int | str) -> None:
        """Move the object; handles held elsewhere learn of it by redirect."""
        bid = self.resolve_backend(target).backend_id
        self._routed(handle.object_id, MessageType.MOVE, [handle.object_id, bid], CallTiming())
        with self._lock:
            self._placement[handle.object_id] = bid

    def replicate(self, handle: StubHandle, target: int | str) -> None:
        bid = self.resolve_backend(target).backend_id
        self._routed(handle.object_id, MessageType.REPLICATE, [handle.object_id, bid], CallTiming())

    # -- service queries --

    def health(self, backend: int | str) -> tuple[float, int]:
        uptime, bid = self._conn(self.resolve_backend(backend).backend_id).call(MessageType.HEALTH)
        return uptime, bid

    def metrics(self, backend: int | str, reset_peak: bool = False) -> dict[str, Any]:
        bid = self.resolve_backend(backend).backend_id
        m = unpairs(self._conn(bid).call(MessageType.METRICS, [reset_peak])[0])
        m["method_seconds"] = unpairs(m["method_seconds"])
        return m

    def stub(self, class_name: str) -> StubClass:
        return stub_by_class_name(self, class_name)


class StubHandle:
    """Client-side shadow of a persistent object.

    Holds no attribute data.  Declared methods are callable as regular
    methods; declared attributes read and write through to the backend.
    """

    __slots__ = ("object_id", "class_name", "descriptor", "session")

    def __init__(self, object_id: ObjectId, class_name: str, descriptor: ClassDescriptor,
                 session: Session):
        object.__setattr__(self, "object_id", object_id)
        object.__setattr__(self, "class_name", class_name)
        object.__setattr__(self, "descriptor", descriptor)
        object.__setattr__(self, "session", session)

    def invoke(self, method: str, *args: Any) -> tuple[Any, CallTiming]:
        return self.session.invoke(self, method, args)

    def __getattr__(self, name: str) -> Any:
        desc = object.__getattribute__(self, "descriptor")
        if desc.has_method(name):
            def bound(*args: Any) -> Any:
                return self.session.invoke(self, name, args)[0]
            bound.__name__ = name
            return bound
        if name in desc.attribute_kinds:
            return self.session.get_attribute(self, name)
        raise AttributeError(f"{desc.class_name} has no method or attribute {name!r}")

    def __setattr__(self, name: str, value: Any) -> None:
        if name in self.descriptor.attribute_kinds:
            self.session.set_attribute(self, name, value)
        else:
            raise AttributeError(f"{self.class_name} has no attribute {name!r}")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StubHandle) and other.object_id == self.object_id

    def __hash__(self) -> int:
        return hash(self.object_id)

    def __repr__(self) -> str:
        return f"<{self.class_name} stub {self.object_id}>"


class StubClass:
    """Constructor for persistent objects of one class, built from its schema."""

    def __init__(self, session: Session, descriptor: ClassDescriptor):
        self.session = session
        self.descriptor = descriptor

    @property
    def class_name(self) -> str:
        return self.descriptor.class_name

    def __call__(self, backend: int | str, **attributes: Any) -> StubHandle:
        return self.session.make_persistent(self.class_name, attributes, backend)

    def attach(self, object_id: ObjectId) -> StubHandle:
        return self.session.attach(object_id, self.class_name)

    def __repr__(self) -> str:
        return f"<stub class {self.class_name}>"


def stub_by_class_name(session: Session, class_name: str) -> StubClass:
    """Stub constructor for ``class_name``; no implementation needed locally."""
    return StubClass(session, session.describe(class_name))
