"""Binary inter-service protocol: canonical frames over length-prefixed I/O.

Frame layout (all integers big-endian, strings are u32 length + UTF-8):

    kind:u8  message-id:u64  operation:str  resource:str
    [fault-name:str when kind = 3]  payload:value

    value := tag:u8 scalar-bytes  children-count:u32
             { name:str  vector-length:u32  value... } per child

Scalar tags: 0 void, 1 bool (1 byte), 2 int (i32), 3 long (i64),
4 double (f64), 5 string, 6 bytes. Kinds survive the wire exactly,
unlike the typeless web formats. On a connection every frame is preceded
by a u32 total length, which allows pipelining with out-of-order
responses matched by message id.
"""

from __future__ import annotations

import struct

from . import values
from .values import Value

ONE_WAY = 0
RR_REQUEST = 1
RESPONSE = 2
FAULT_RESPONSE = 3

_TAGS = {
    values.VOID: 0,
    values.BOOL: 1,
    values.INT: 2,
    values.LONG: 3,
    values.DOUBLE: 4,
    values.STRING: 5,
    values.BYTES: 6,
}
_KINDS = {tag: kind for kind, tag in _TAGS.items()}

MAX_FRAME_BYTES = 64 * 1024 * 1024


class Malformed(Exception):
    """The bytes do not form a valid frame."""


class Frame:
    __slots__ = ("kind", "message_id", "operation", "resource", "payload",
                 "fault_name")

    def __init__(self, kind: int, message_id: int, operation: str = "",
                 resource: str = "/", payload: Value = None,
                 fault_name: str = ""):
        self.kind = kind
        self.message_id = message_id
        self.operation = operation
        self.resource = resource
        self.payload = payload if payload is not None else Value()
        self.fault_name = fault_name

    def __repr__(self):
        return (f"Frame(kind={self.kind}, id={self.message_id}, "
                f"op={self.operation!r})")


def _put_string(out: bytearray, s: str) -> None:
    raw = s.encode("utf-8")
    out += struct.pack(">I", len(raw))
    out += raw


def _put_value(out: bytearray, v: Value) -> None:
    tag = _TAGS.get(v.kind)
    if tag is None:
        raise ValueError(f"unknown scalar kind {v.kind}")
    out.append(tag)
    if v.kind == values.BOOL:
        out.append(1 if v.content else 0)
    elif v.kind == values.INT:
        out += struct.pack(">i", v.content)
    elif v.kind == values.LONG:
        out += struct.pack(">q", v.content)
    elif v.kind == values.DOUBLE:
        out += struct.pack(">d", v.content)
    elif v.kind == values.STRING:
        _put_string(out, v.content)
    elif v.kind == values.BYTES:
        out += struct.pack(">I", len(v.content))
        out += v.content
    out += struct.pack(">I", len(v.children))
    for name, vec in v.children.items():
        _put_string(out, name)
        out += struct.pack(">I", len(vec))
        for item in vec:
            _put_value(out, item)


def encode_frame(frame: Frame) -> bytes:
    out = bytearray()
    out.append(frame.kind)
    out += struct.pack(">Q", frame.message_id)
    _put_string(out, frame.operation)
    _put_string(out, frame.resource)
    if frame.kind == FAULT_RESPONSE:
        _put_string(out, frame.fault_name)
    _put_value(out, frame.payload)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise Malformed("truncated frame")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def string(self) -> str:
        raw = self.take(self.u32())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise Malformed(f"bad UTF-8 in string: {exc}") from None

    def value(self, depth: int = 0) -> Value:
        if depth > 128:
            raise Malformed("value nesting too deep")
        tag = self.u8()
        kind = _KINDS.get(tag)
        if kind is None:
            raise Malformed(f"unknown scalar tag {tag}")
        if kind == values.VOID:
            v = Value()
        elif kind == values.BOOL:
            v = Value(kind, self.u8() != 0)
        elif kind == values.INT:
            v = Value(kind, struct.unpack(">i", self.take(4))[0])
        elif kind == values.LONG:
            v = Value(kind, struct.unpack(">q", self.take(8))[0])
        elif kind == values.DOUBLE:
            v = Value(kind, struct.unpack(">d", self.take(8))[0])
        elif kind == values.STRING:
            v = Value(kind, self.string())
        else:
            v = Value(kind, self.take(self.u32()))
        n_children = self.u32()
        if n_children > len(self.data):
            raise Malformed("child count exceeds frame size")
        for _ in range(n_children):
            name = self.string()
            if name in v.children:
                raise Malformed(f"duplicate child name {name!r}")
            vec_len = self.u32()
            if vec_len > len(self.data):
                raise Malformed("vector length exceeds frame size")
            v.children[name] = [self.value(depth + 1) for _ in range(vec_len)]
        return v


def decode_frame(data: bytes) -> Frame:
    """Inverse of ``encode_frame``; raises Malformed on any defect."""
    r = _Reader(data)
    kind = r.u8()
    if kind not in (ONE_WAY, RR_REQUEST, RESPONSE, FAULT_RESPONSE):
        raise Malformed(f"unknown frame kind {kind}")
    message_id = struct.unpack(">Q", r.take(8))[0]
    operation = r.string()
    resource = r.string()
    fault_name = r.string() if kind == FAULT_RESPONSE else ""
    payload = r.value()
    if r.pos != len(data):
        raise Malformed(f"{len(data) - r.pos} trailing bytes after frame")
    return Frame(kind, message_id, operation, resource, payload, fault_name)


async def read_frame(reader) -> Frame:
    """One length-prefixed frame from a stream."""
    header = await reader.readexactly(4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise Malformed(f"frame of {length} bytes exceeds limit")
    return decode_frame(await reader.readexactly(length))


def frame_bytes(frame: Frame) -> bytes:
    body = encode_frame(frame)
    return struct.pack(">I", len(body)) + body
