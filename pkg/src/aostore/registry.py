"""Class descriptors and the per-process class registry.

A descriptor is the schema of a persistent class: its attributes and the
signatures of its active methods.  Backends register a descriptor together
with the functions implementing its methods; clients may hold descriptors
alone, which is enough to build stubs but never to execute anything.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .errors import ClassNotRegistered, MethodNotFound, NotExecutableHere, SchemaConflict, SchemaViolation
from .values import Kind, conforms

MethodImpl = Callable[..., Any]

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MethodDescriptor:
    method_name: str
    param_kinds: tuple[Kind, ...] = ()
    return_kind: Kind = Kind.ANY

    @property
    def arity(self) -> int:
        return len(self.param_kinds)

    def check_args(self, args: list) -> None:
        if len(args) != self.arity:
            raise MethodNotFound(
                f"{self.method_name} takes {self.arity} argument(s), got {len(args)}"
            )
        for i, (a, k) in enumerate(zip(args, self.param_kinds)):
            if not conforms(a, k):
                raise SchemaViolation(f"{self.method_name} argument {i} must be {k.value}")

    def to_value(self) -> list:
        return [self.method_name, [k.value for k in self.param_kinds], self.return_kind.value]

    @classmethod
    def from_value(cls, v: list) -> MethodDescriptor:
        name, params, ret = v
        return cls(name, tuple(Kind(p) for p in params), Kind(ret))


@dataclass(frozen=True)
class ClassDescriptor:
    class_name: str
    attributes: tuple[tuple[str, Kind], ...] = ()
    methods: tuple[MethodDescriptor, ...] = ()

    def __post_init__(self):
        names = [m.method_name for m in self.methods]
        if len(set(names)) != len(names):
            raise SchemaConflict(f"duplicate method names in {self.class_name}")
        attrs = [a for a, _ in self.attributes]
        if len(set(attrs)) != len(attrs):
            raise SchemaConflict(f"duplicate attribute names in {self.class_name}")

    @property
    def attribute_kinds(self) -> dict[str, Kind]:
        return dict(self.attributes)

    def method(self, name: str) -> MethodDescriptor:
        for m in self.methods:
            if m.method_name == name:
                return m
        raise MethodNotFound(f"{self.class_name} has no method {name!r}")

    def has_method(self, name: str) -> bool:
        return any(m.method_name == name for m in self.methods)

    def check_attributes(self, attrs: Mapping[str, Any]) -> None:
        """Exactly the declared names, each value of its declared kind."""
        declared = self.attribute_kinds
        missing = declared.keys() - attrs.keys()
        extra = attrs.keys() - declared.keys()
        if missing or extra:
            raise SchemaViolation(
                f"{self.class_name}: missing attributes {sorted(missing)}, "
                f"undeclared attributes {sorted(extra)}"
            )
        for name, v in attrs.items():
            self.check_attribute(name, v)

    def check_attribute(self, name: str, v: Any) -> None:
        kind = self.attribute_kinds.get(name)
        if kind is None:
            raise SchemaViolation(f"{self.class_name} has no attribute {name!r}")
        if not conforms(v, kind):
            raise SchemaViolation(f"{self.class_name}.{name} must be {kind.value}")

    def to_value(self) -> list:
        return [
            self.class_name,
            [[a, k.value] for a, k in self.attributes],
            [m.to_value() for m in self.methods],
        ]

    @classmethod
    def from_value(cls, v: list) -> ClassDescriptor:
        name, attrs, methods = v
        return cls(
            name,
            tuple((a, Kind(k)) for a, k in attrs),
            tuple(MethodDescriptor.from_value(m) for m in methods),
        )


class Registry:
    """Maps class names to descriptors and, optionally, implementations.

    Registration is expected at startup; lookups are safe from any thread.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._descriptors: dict[str, ClassDescriptor] = {}
        self._impls: dict[str, dict[str, MethodImpl]] = {}

    def register_class(self, descriptor: ClassDescriptor,
                       implementation: Mapping[str, MethodImpl] | None = None) -> ClassDescriptor:
        if implementation is not None:
            unknown = set(implementation) - {m.method_name for m in descriptor.methods}
            if unknown:
                raise SchemaConflict(f"implementation for undeclared methods {sorted(unknown)}")
        with self._lock:
            existing = self._descriptors.get(descriptor.class_name)
            if existing is not None and existing != descriptor:
                raise SchemaConflict(
                    f"class {descriptor.class_name!r} already registered with a different schema"
                )
            self._descriptors[descriptor.class_name] = descriptor
            if implementation is not None:
                self._impls[descriptor.class_name] = dict(implementation)
        return descriptor

    def describe(self, class_name: str) -> ClassDescriptor:
        try:
            return self._descriptors[class_name]
        except KeyError:
            raise ClassNotRegistered(f"class {class_name!r} is not registered") from None

    def __contains__(self, class_name: str) -> bool:
        return class_name in self._descriptors

    def class_names(self) -> list[str]:
        return sorted(self._descriptors)

    def descriptors(self) -> list[ClassDescriptor]:
        return [self._descriptors[n] for n in self.class_names()]

    def is_executable(self, class_name: str) -> bool:
        return class_name in self._impls

    def implementation_count(self) -> int:
        """Number of method implementations held; zero for a stub-only registry."""
        return sum(len(t) for t in self._impls.values())

    def implementation(self, class_name: str, method_name: str) -> MethodImpl:
        desc = self.describe(class_name)
        desc.method(method_name)
        table = self._impls.get(class_name)
        if table is None or method_name not in table:
            raise NotExecutableHere(
                f"{class_name}.{method_name} has no implementation in this process"
            )
        return table[method_name]


class StateAccess:
    """numpy conveniences shared by live and local object states."""

    def array(self, name: str):
        v = self[name]
        return None if v is None else v.to_numpy()

    def set_array(self, name: str, arr) -> None:
        from .values import FloatArray

        self[name] = None if arr is None else FloatArray.from_numpy(arr)


class LocalObject(StateAccess):
    """An instance of an :class:`ActiveClass` living in this process.

    Methods run through the very same implementation functions a backend
    uses, which is what makes local and offloaded runs comparable.
    """

    def __init__(self, active: ActiveClass, attributes: Mapping[str, Any] | None = None,
                 context: Any = None):
        desc = active.descriptor
        attrs = {name: None for name, _ in desc.attributes}
        attrs.update(attributes or {})
        desc.check_attributes(attrs)
        self._active = active
        self._desc = desc
        self._attrs = attrs
        self.context = context

    @property
    def class_name(self) -> str:
        return self._desc.class_name

    def __getitem__(self, name: str) -> Any:
        try:
            return self._attrs[name]
        except KeyError:
            raise SchemaViolation(f"{self.class_name} has no attribute {name!r}") from None

    def __setitem__(self, name: str, value: Any) -> None:
        self._desc.check_attribute(name, value)
        self._attrs[name] = value

    def call(self, method: str, *args: Any) -> Any:
        mdesc = self._desc.method(method)
        mdesc.check_args(list(args))
        return self._active.implementation[method](self, *args)


class ActiveClass:
    """Declarative builder for a persistent class.

    >>> counter = ActiveClass("demo.counter", {"n": Kind.INT})
    >>> @counter.method(returns=Kind.INT)
    ... def bump(obj):
    ...     obj["n"] += 1
    ...     return obj["n"]

    Each method receives the live object state as its first argument.
    """

    def __init__(self, class_name: str, attributes: Mapping[str, Kind]):
        self.class_name = class_name
        self.attributes = dict(attributes)
        self._methods: list[MethodDescriptor] = []
        self.implementation: dict[str, MethodImpl] = {}

    def method(self, params: Iterable[Kind] = (), returns: Kind = Kind.ANY,
               name: str | None = None) -> Callable[[MethodImpl], MethodImpl]:
        def deco(fn: MethodImpl) -> MethodImpl:
            mname = name or fn.__name__
            self._methods.append(MethodDescriptor(mname, tuple(params), returns))
            self.implementation[mname] = fn
            return fn
        return deco

    @property
    def descriptor(self) -> ClassDescriptor:
        return ClassDescriptor(self.class_name, tuple(self.attributes.items()), tuple(self._methods))

    def register(self, registry: Registry) -> ClassDescriptor:
        return registry.register_class(self.descriptor, self.implementation)

    def local(self, **attributes: Any) -> LocalObject:
        return LocalObject(self, attributes)


default_registry = Registry()
