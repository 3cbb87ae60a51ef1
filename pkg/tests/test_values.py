from __future__ import annotations

import math
import struct
import uuid

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aostore.errors import DecodeError, SchemaViolation
from aostore.values import (FloatArray, Kind, conforms, decode_value_at, deserialize_value,
                            encoded_size, kind_of, pairs, serialize_value, unpairs)

from strategies import float_arrays, values


@given(values)
@settings(max_examples=300, deadline=None)
def test_round_trip_identity(v):
    data = serialize_value(v)
    assert deserialize_value(data) == v
    assert encoded_size(v) == len(data)


@given(values)
@settings(max_examples=200, deadline=None)
def test_encoding_is_canonical(v):
    data = serialize_value(v)
    assert serialize_value(deserialize_value(data)) == data


@given(st.floats(width=64))
def test_float_bits_preserved_including_nan(x):
    back = deserialize_value(serialize_value(x))
    assert struct.pack(">d", back) == struct.pack(">d", x)


@pytest.mark.parametrize("value, expected", [
    (None, b"\x00"),
    (True, b"\x01\x01"),
    (False, b"\x01\x00"),
    (1, b"\x02" + b"\x00" * 7 + b"\x01"),
    (-1, b"\x02" + b"\xff" * 8),
    (0.0, b"\x03" + b"\x00" * 8),
    (1.0, b"\x03\x3f\xf0" + b"\x00" * 6),
    ("hé", b"\x04\x00\x00\x00\x03h\xc3\xa9"),
    (b"\x00\xff", b"\x05\x00\x00\x00\x02\x00\xff"),
    ([None, True], b"\x07\x00\x00\x00\x02\x00\x01\x01"),
    (uuid.UUID(int=1), b"\x08" + b"\x00" * 15 + b"\x01"),
])
def test_hand_encoded_bytes(value, expected):
    assert serialize_value(value) == expected


def test_float_zero_is_nine_bytes():
    assert len(serialize_value(0.0)) == 9


def test_float_array_layout():
    arr = FloatArray.from_values((2, 1), [1.0, -2.0])
    expected = b"\x06\x02" + struct.pack(">II", 2, 1) + struct.pack(">2d", 1.0, -2.0)
    assert serialize_value(arr) == expected


def test_one_mib_array_length_arithmetic():
    n = (1 << 20) // 8
    arr = FloatArray.from_numpy(np.zeros(n))
    # tag + rank + one u32 dim + payload
    assert len(serialize_value(arr)) == 1 + 1 + 4 + (1 << 20)
    assert encoded_size(arr) == 1 + 1 + 4 + (1 << 20)


def test_numpy_round_trip_is_exact(rng):
    a = rng.normal(size=(7, 3))
    assert np.array_equal(FloatArray.from_numpy(a).to_numpy(), a)


@given(float_arrays())
def test_float_array_tolist_matches_numpy(arr):
    assert arr.tolist() == list(arr.to_numpy().ravel()) or any(math.isnan(x) for x in arr.tolist())


def test_float_array_shape_mismatch():
    with pytest.raises(SchemaViolation):
        FloatArray((3,), b"\x00" * 16)


@pytest.mark.parametrize("data, offset", [
    (b"", 0),                             # no tag
    (b"\x09", 0),                         # unknown tag
    (b"\x02\x00\x00", 1),                 # short int
    (b"\x04\x00\x00\x00\x05ab", 5),       # text shorter than its length
    (b"\x01\x02", 1),                     # non-canonical bool
    (b"\x04\x00\x00\x00\x01\xff", 5),     # invalid UTF-8
    (b"\x07\x00\x00\x00\x02\x00", 6),     # list missing its second item
])
def test_decode_errors_carry_offsets(data, offset):
    with pytest.raises(DecodeError) as info:
        deserialize_value(data)
    assert info.value.offset == offset


def test_trailing_bytes_rejected():
    with pytest.raises(DecodeError) as info:
        deserialize_value(b"\x00\x00")
    assert info.value.offset == 1


def test_decode_value_at_returns_next_offset():
    buf = serialize_value(5) + serialize_value("x")
    v, pos = decode_value_at(buf, 0)
    assert (v, pos) == (5, 9)
    assert decode_value_at(buf, pos) == ("x", len(buf))


def test_kinds_and_conformance():
    assert kind_of(True) is Kind.BOOL
    assert kind_of(3) is Kind.INT
    assert kind_of(FloatArray((0,), b"")) is Kind.FLOAT_ARRAY
    assert conforms(None, Kind.FLOAT_ARRAY)
    assert conforms("x", Kind.ANY)
    assert not conforms(1, Kind.FLOAT)
    with pytest.raises(SchemaViolation):
        kind_of({"a": 1})


def test_pairs_round_trip():
    d = {"a": 1, "b": [2.0, None]}
    assert unpairs(deserialize_value(serialize_value(pairs(d)))) == d
    with pytest.raises(SchemaViolation):
        unpairs([1, 2])


def test_out_of_range_int_rejected():
    with pytest.raises(SchemaViolation):
        serialize_value(2 ** 63)
