from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from aostore.backend import BackendService
from aostore.client import Session
from aostore.metadata import MetadataService
from aostore.registry import ActiveClass, Registry
from aostore.values import Kind
from aostore.workloads import register as register_workloads

# a small class for store-level tests
blob = ActiveClass("test.blob", {"data": Kind.FLOAT_ARRAY, "note": Kind.TEXT, "count": Kind.INT})


@blob.method(params=[Kind.FLOAT], returns=Kind.FLOAT)
def scale(obj, factor):
    """Multiply ``data`` in place; return the new sum."""
    arr = obj.array("data") * factor
    obj.set_array("data", arr)
    return float(arr.sum())


@blob.method(params=[Kind.TEXT], returns=Kind.TEXT)
def echo(obj, text):
    return text


@blob.method(returns=Kind.INT)
def bump(obj):
    obj["count"] = (obj["count"] or 0) + 1
    return obj["count"]


@blob.method(params=[Kind.FLOAT], returns=Kind.FLOAT)
def spin(obj, seconds):
    """Busy loop for ``seconds`` of CPU work."""
    t0 = time.perf_counter()
    x = 0.0
    while time.perf_counter() - t0 < seconds:
        x += 1.0
    return x


@blob.method(params=[Kind.OBJECT_REF], returns=Kind.FLOAT)
def peer_sum(obj, other):
    """Sum of another blob's data, fetched through the backend context."""
    return float(obj.context.call(other, "total"))


@blob.method(returns=Kind.FLOAT)
def total(obj):
    return float(obj.array("data").sum())


def backend_registry() -> Registry:
    reg = Registry()
    register_workloads(reg)
    blob.register(reg)
    return reg


@dataclass
class Cluster:
    metadata: MetadataService
    backends: list[BackendService] = field(default_factory=list)
    sessions: list[Session] = field(default_factory=list)

    @property
    def address(self) -> str:
        return self.metadata.address

    def add_backend(self, label: str = "", throttle: float = 1.0, port: int = 0) -> BackendService:
        b = BackendService(backend_registry(), self.address, label=label or
                           f"b{len(self.backends) + 1}", throttle=throttle, port=port).start()
        self.backends.append(b)
        return b

    def session(self, latency: float = 0.0) -> Session:
        s = Session(self.address, latency=latency)
        self.sessions.append(s)
        return s

    def close(self) -> None:
        for s in self.sessions:
            s.close()
        for b in self.backends:
            b.stop()
        self.metadata.stop()


def make_cluster(n: int = 2, **kw) -> Cluster:
    cluster = Cluster(MetadataService(**kw).start())
    for _ in range(n):
        cluster.add_backend()
    return cluster


@pytest.fixture
def cluster():
    c = make_cluster(2)
    yield c
    c.close()


@pytest.fixture
def session(cluster):
    return cluster.session()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------

CRITERIA: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    CRITERIA[number] = f"criterion {number:>2} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
