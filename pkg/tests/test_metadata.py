from __future__ import annotations

import pytest

from aostore.errors import AlreadyRegistered, BackendUnavailable, ObjectNotFound
from aostore.metadata import MetadataState, ObjectLocation, ping
from aostore.values import new_object_id

from conftest import make_cluster


class FakeClock:
    def __init__(self):
        self.t = 1000.0

    def __call__(self) -> float:
        return self.t


def test_ids_are_assigned_in_registration_order():
    st = MetadataState()
    assert [st.register_backend(f"h:{p}") for p in (1, 2, 3)] == [1, 2, 3]


def test_backend_turns_suspect_after_three_missed_heartbeats():
    clock = FakeClock()
    st = MetadataState(clock=clock, heartbeat_interval=2.0)
    bid = st.register_backend("h:1", "edge")
    clock.t += 6.0
    assert not st.backend(bid).suspect
    clock.t += 0.01
    assert st.backend(bid).suspect
    st.heartbeat(bid)
    assert not st.backend(bid).suspect


def test_live_address_cannot_register_twice_but_suspect_one_rejoins():
    clock = FakeClock()
    st = MetadataState(clock=clock)
    bid = st.register_backend("h:1")
    with pytest.raises(AlreadyRegistered):
        st.register_backend("h:1")
    clock.t += 100
    assert st.register_backend("h:1", "again") == bid
    assert st.backend(bid).label == "again"


def test_placement_requires_registered_backends():
    st = MetadataState()
    st.register_backend("h:1")
    oid = new_object_id()
    with pytest.raises(BackendUnavailable):
        st.record_placement(ObjectLocation(oid, "c", 2))
    with pytest.raises(ObjectNotFound):
        st.lookup_object(oid)
    st.record_placement(ObjectLocation(oid, "c", 1, frozenset({1})))
    # the primary never doubles as its own replica
    assert st.lookup_object(oid).replicas == frozenset()


def test_snapshot_round_trip(tmp_path):
    st = MetadataState()
    for a in ("h:1", "h:2", "h:3"):
        st.register_backend(a)
    locs = [ObjectLocation(new_object_id(), "c", 1, frozenset({2, 3})),
            ObjectLocation(new_object_id(), "d", 3)]
    for loc in locs:
        st.record_placement(loc)
    path = tmp_path / "meta.snap"
    st.save_snapshot(path)
    fresh = MetadataState()
    assert fresh.load_snapshot(path) == 2
    assert {loc.object_id: loc for loc in fresh.locations()} == {loc.object_id: loc for loc in locs}


def test_health_sweep_detects_stop_and_restart():
    c = make_cluster(2)
    try:
        assert c.metadata.health_sweep() == {1: "alive", 2: "alive"}
        victim = c.backends[1]
        port = victim.server.port
        victim.stop()
        assert not ping(victim.address)
        assert c.metadata.health_sweep() == {1: "alive", 2: "suspect"}
        c.backends[1] = c.add_backend(label="b2", port=port)
        c.backends.pop()
        assert c.backends[1].backend_id == 2
        assert c.metadata.health_sweep() == {1: "alive", 2: "alive"}
    finally:
        c.close()


def test_session_sees_suspect_backend_as_unavailable():
    c = make_cluster(2)
    try:
        s = c.session()
        c.backends[1].stop()
        c.metadata.health_sweep()
        with pytest.raises(BackendUnavailable):
            s.make_persistent("test.blob", {}, backend=2)
    finally:
        c.close()
