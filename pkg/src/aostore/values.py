"""The closed value model and its canonical binary encoding.

Values are plain Python objects:

    None, bool, int (signed 64-bit), float, str, bytes, FloatArray,
    list (of values), uuid.UUID (object reference)

Encoding is big-endian: one tag byte followed by the payload.  Each value has
exactly one valid byte form, so encoded sizes are reproducible.
"""

from __future__ import annotations

import enum
import math
import struct
import uuid
from dataclasses import dataclass
from typing import Any, Iterable, Union

from .errors import DecodeError, SchemaViolation

ObjectId = uuid.UUID

INT_MIN = -(2**63)
INT_MAX = 2**63 - 1
U32_MAX = 2**32 - 1


def new_object_id() -> ObjectId:
    return uuid.uuid4()


class Tag(enum.IntEnum):
    NULL = 0
    BOOL = 1
    INT = 2
    FLOAT = 3
    TEXT = 4
    BYTES = 5
    FLOAT_ARRAY = 6
    LIST = 7
    OBJECT_REF = 8


class Kind(str, enum.Enum):
    """Declared kinds used in class and method descriptors."""

    NULL = "null"
    BOOL = "bool"
    INT = "int"
    FLOAT = "float"
    TEXT = "text"
    BYTES = "bytes"
    FLOAT_ARRAY = "float_array"
    LIST = "list"
    OBJECT_REF = "object_ref"
    ANY = "any"


@dataclass(frozen=True)
class FloatArray:
    """Immutable n-dimensional float64 array.

    ``data`` holds the elements in row-major order as big-endian IEEE-754
    doubles, which is also their wire form.  numpy is only imported by the
    conversion helpers, so clients can carry arrays without it.
    """

    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) > 255:
            raise SchemaViolation(f"FloatArray rank {len(shape)} exceeds 255")
        if any(d < 0 or d > U32_MAX for d in shape):
            raise SchemaViolation(f"FloatArray dims out of range: {shape}")
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))
        if math.prod(shape) * 8 != len(self.data):
            raise SchemaViolation(
                f"FloatArray shape {shape} needs {math.prod(shape)} elements, "
                f"got {len(self.data) // 8}"
            )

    @property
    def size(self) -> int:
        return len(self.data) // 8

    @property
    def nbytes(self) -> int:
        return len(self.data)

    @classmethod
    def from_values(cls, shape: Iterable[int], values: Iterable[float]) -> FloatArray:
        vals = [float(v) for v in values]
        return cls(tuple(shape), struct.pack(f">{len(vals)}d", *vals))

    @classmethod
    def from_numpy(cls, arr: Any) -> FloatArray:
        import numpy as np

        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape, arr.astype(">f8", copy=False).tobytes())

    def to_numpy(self) -> Any:
        """Native-endian, writable copy."""
        import numpy as np

        return np.frombuffer(self.data, dtype=">f8").astype(np.float64).reshape(self.shape)

    def tolist(self) -> list[float]:
        return list(struct.unpack(f">{self.size}d", self.data))

    def __repr__(self) -> str:
        return f"FloatArray(shape={self.shape}, nbytes={self.nbytes})"


Value = Union[None, bool, int, float, str, bytes, FloatArray, list, ObjectId]


def kind_of(v: Any) -> Kind:
    if v is None:
        return Kind.NULL
    if isinstance(v, bool):
        return Kind.BOOL
    if isinstance(v, int):
        return Kind.INT
    if isinstance(v, float):
        return Kind.FLOAT
    if isinstance(v, str):
        return Kind.TEXT
    if isinstance(v, (bytes, bytearray)):
        return Kind.BYTES
    if isinstance(v, FloatArray):
        return Kind.FLOAT_ARRAY
    if isinstance(v, (list, tuple)):
        return Kind.LIST
    if isinstance(v, uuid.UUID):
        return Kind.OBJECT_REF
    raise SchemaViolation(f"{type(v).__name__} is not a store value")


def conforms(v: Any, kind: Kind) -> bool:
    """Null conforms to every declared kind; ANY accepts any value."""
    if kind is Kind.ANY or v is None:
        return True
    return kind_of(v) is kind


_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")
_U32 = struct.Struct(">I")


def _encode_into(v: Any, out: list[bytes]) -> None:
    if v is None:
        out.append(b"\x00")
    elif isinstance(v, bool):
        out.append(b"\x01\x01" if v else b"\x01\x00")
    elif isinstance(v, int):
        if not INT_MIN <= v <= INT_MAX:
            raise SchemaViolation(f"integer {v} does not fit in 64 bits")
        out.append(b"\x02" + _I64.pack(v))
    elif isinstance(v, float):
        out.append(b"\x03" + _F64.pack(v))
    elif isinstance(v, str):
        raw = v.encode("utf-8")
        out.append(b"\x04" + _U32.pack(len(raw)))
        out.append(raw)
    elif isinstance(v, (bytes, bytearray)):
        out.append(b"\x05" + _U32.pack(len(v)))
        out.append(bytes(v))
    elif isinstance(v, FloatArray):
        out.append(struct.pack(f">BB{len(v.shape)}I", Tag.FLOAT_ARRAY, len(v.shape), *v.shape))
        out.append(v.data)
    elif isinstance(v, (list, tuple)):
        out.append(b"\x07" + _U32.pack(len(v)))
        for item in v:
            _encode_into(item, out)
    elif isinstance(v, uuid.UUID):
        out.append(b"\x08" + v.bytes)
    else:
        raise SchemaViolation(f"{type(v).__name__} is not a store value")


def serialize_value(v: Any) -> bytes:
    out: list[bytes] = []
    _encode_into(v, out)
    return b"".join(out)


def encoded_size(v: Any) -> int:
    """Length of ``serialize_value(v)`` without building the bytes."""
    if v is None:
        return 1
    if isinstance(v, bool):
        return 2
    if isinstance(v, (int, float)):
        return 9
    if isinstance(v, str):
        return 5 + len(v.encode("utf-8"))
    if isinstance(v, (bytes, bytearray)):
        return 5 + len(v)
    if isinstance(v, FloatArray):
        return 2 + 4 * len(v.shape) + v.nbytes
    if isinstance(v, (list, tuple)):
        return 5 + sum(encoded_size(x) for x in v)
    if isinstance(v, uuid.UUID):
        return 17
    raise SchemaViolation(f"{type(v).__name__} is not a store value")


def _need(buf: memoryview, pos: int, n: int, what: str) -> None:
    if pos + n > len(buf):
        raise DecodeError(f"truncated {what}: need {n} bytes, have {len(buf) - pos}", pos)


def decode_value_at(buf: bytes | memoryview, pos: int = 0) -> tuple[Any, int]:
    """Decode one value starting at ``pos``; return it and the next offset."""
    mv = buf if isinstance(buf, memoryview) else memoryview(buf)
    _need(mv, pos, 1, "tag")
    tag = mv[pos]
    start = pos
    pos += 1
    if tag == Tag.NULL:
        return None, pos
    if tag == Tag.BOOL:
        _need(mv, pos, 1, "bool")
        b = mv[pos]
        if b > 1:
            raise DecodeError(f"non-canonical bool byte {b}", pos)
        return b == 1, pos + 1
    if tag == Tag.INT:
        _need(mv, pos, 8, "int")
        return _I64.unpack_from(mv, pos)[0], pos + 8
    if tag == Tag.FLOAT:
        _need(mv, pos, 8, "float")
        return _F64.unpack_from(mv, pos)[0], pos + 8
    if tag in (Tag.TEXT, Tag.BYTES):
        _need(mv, pos, 4, "length")
        n = _U32.unpack_from(mv, pos)[0]
        pos += 4
        _need(mv, pos, n, "payload")
        raw = bytes(mv[pos:pos + n])
        if tag == Tag.BYTES:
            return raw, pos + n
        try:
            return raw.decode("utf-8"), pos + n
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 text: {exc.reason}", pos + exc.start) from None
    if tag == Tag.FLOAT_ARRAY:
        _need(mv, pos, 1, "rank")
        rank = mv[pos]
        pos += 1
        _need(mv, pos, 4 * rank, "shape")
        shape = struct.unpack_from(f">{rank}I", mv, pos)
        pos += 4 * rank
        n = 8 * math.prod(shape)
        _need(mv, pos, n, "array data")
        return FloatArray(shape, bytes(mv[pos:pos + n])), pos + n
    if tag == Tag.LIST:
        _need(mv, pos, 4, "count")
        count = _U32.unpack_from(mv, pos)[0]
        pos += 4
        items = []
        for _ in range(count):
            item, pos = decode_value_at(mv, pos)
            items.append(item)
        return items, pos
    if tag == Tag.OBJECT_REF:
        _need(mv, pos, 16, "object ref")
        return uuid.UUID(bytes=bytes(mv[pos:pos + 16])), pos + 16
    raise DecodeError(f"unknown value tag {tag}", start)


def deserialize_value(buf: bytes | memoryview) -> Any:
    value, end = decode_value_at(buf, 0)
    if end != len(buf):
        raise DecodeError(f"{len(buf) - end} trailing bytes after value", end)
    return value


def pairs(mapping: dict[str, Any]) -> list:
    """Encode a str-keyed mapping as a list of [name, value] pairs."""
    return [[k, v] for k, v in mapping.items()]


def unpairs(items: list) -> dict[str, Any]:
    try:
        return {str(k): v for k, v in items}
    except (TypeError, ValueError):
        raise SchemaViolation("expected a list of [name, value] pairs") from None
