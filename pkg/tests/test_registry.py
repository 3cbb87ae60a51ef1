from __future__ import annotations

import pytest

from aostore.errors import (ClassNotRegistered, MethodNotFound, NotExecutableHere, SchemaConflict,
                            SchemaViolation)
from aostore.registry import ActiveClass, ClassDescriptor, MethodDescriptor, Registry
from aostore.values import Kind, deserialize_value, serialize_value

from conftest import blob


def counter_class(ret: Kind = Kind.INT) -> ActiveClass:
    c = ActiveClass("demo.counter", {"n": Kind.INT})

    @c.method(returns=ret)
    def bump(obj):
        obj["n"] = (obj["n"] or 0) + 1
        return obj["n"]

    return c


def test_register_is_idempotent():
    reg = Registry()
    c = counter_class()
    c.register(reg)
    c.register(reg)
    assert reg.class_names() == ["demo.counter"]
    assert reg.implementation_count() == 1


def test_conflicting_schema_rejected():
    reg = Registry()
    counter_class().register(reg)
    with pytest.raises(SchemaConflict):
        counter_class(Kind.FLOAT).register(reg)


def test_descriptor_only_registry_cannot_execute():
    reg = Registry()
    reg.register_class(counter_class().descriptor)
    assert not reg.is_executable("demo.counter")
    assert reg.implementation_count() == 0
    with pytest.raises(NotExecutableHere):
        reg.implementation("demo.counter", "bump")


def test_unknown_class_and_method():
    reg = Registry()
    with pytest.raises(ClassNotRegistered):
        reg.describe("nope")
    counter_class().register(reg)
    with pytest.raises(MethodNotFound):
        reg.implementation("demo.counter", "missing")


def test_descriptor_value_round_trip():
    d = blob.descriptor
    assert ClassDescriptor.from_value(deserialize_value(serialize_value(d.to_value()))) == d


def test_duplicate_names_rejected():
    with pytest.raises(SchemaConflict):
        ClassDescriptor("x", (("a", Kind.INT), ("a", Kind.FLOAT)))
    with pytest.raises(SchemaConflict):
        ClassDescriptor("x", (), (MethodDescriptor("m"), MethodDescriptor("m")))


def test_argument_checks():
    m = MethodDescriptor("f", (Kind.FLOAT, Kind.TEXT), Kind.NULL)
    m.check_args([1.0, "a"])
    m.check_args([None, None])
    with pytest.raises(MethodNotFound):
        m.check_args([1.0])
    with pytest.raises(SchemaViolation):
        m.check_args([1, "a"])


def test_attribute_checks():
    d = blob.descriptor
    with pytest.raises(SchemaViolation):
        d.check_attributes({"data": None, "note": None})
    with pytest.raises(SchemaViolation):
        d.check_attributes({"data": None, "note": None, "count": None, "extra": 1})
    with pytest.raises(SchemaViolation):
        d.check_attribute("count", "three")


def test_local_object_runs_same_implementation():
    obj = counter_class().local(n=4)
    assert obj.call("bump") == 5
    assert obj["n"] == 5
    with pytest.raises(SchemaViolation):
        obj["n"] = 1.5
