"""Minimal ONNX serializer covering the ops a truncated backbone needs.

Writes the protobuf wire format directly: every helper returns encoded
bytes, and a model is just the concatenation of its tagged fields.
"""

import struct

import numpy as np

FLOAT = 1
INT64 = 7
OPSET_VERSION = 13


def varint(n: int) -> bytes:
    if n < 0:
        raise ValueError(f"field values must be non-negative, got {n}")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _tag(field: int, wire: int) -> bytes:
    return varint((field << 3) | wire)


def _ld(field: int, payload: bytes) -> bytes:
    return _tag(field, 2) + varint(len(payload)) + payload


def _vint(field: int, value: int) -> bytes:
    return _tag(field, 0) + varint(value)


def _f32(field: int, value: float) -> bytes:
    return _tag(field, 5) + struct.pack("<f", value)


def tensor_proto(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        dtype, raw = FLOAT, arr.astype("<f4").tobytes()
    elif arr.dtype.kind in "iu":
        dtype, raw = INT64, arr.astype("<i8").tobytes()
    else:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    out = b"".join(_vint(1, d) for d in arr.shape)
    out += _vint(2, dtype)
    out += _ld(8, name.encode())
    out += _ld(9, raw)
    return out


def attr_int(name: str, value: int) -> bytes:
    return _ld(1, name.encode()) + _vint(20, 2) + _vint(3, value)


def attr_ints(name: str, values) -> bytes:
    payload = b"".join(varint(int(v)) for v in values)
    return _ld(1, name.encode()) + _vint(20, 7) + _ld(8, payload)


def attr_float(name: str, value: float) -> bytes:
    return _ld(1, name.encode()) + _vint(20, 1) + _f32(2, value)


def node_proto(op_type: str, inputs, outputs, attrs=(), name: str = "") -> bytes:
    out = b"".join(_ld(1, i.encode()) for i in inputs)
    out += b"".join(_ld(2, o.encode()) for o in outputs)
    if name:
        out += _ld(3, name.encode())
    out += _ld(4, op_type.encode())
    out += b"".join(_ld(5, a) for a in attrs)
    return out


def value_info(name: str, shape) -> bytes:
    dims = b"".join(_ld(1, _vint(1, int(d))) for d in shape)
    tensor_type = _vint(1, FLOAT) + _ld(2, dims)
    return _ld(1, name.encode()) + _ld(2, _ld(1, tensor_type))


def graph_proto(nodes, initializers, inputs, outputs, name: str = "backbone") -> bytes:
    out = b"".join(_ld(1, n) for n in nodes)
    out += _ld(2, name.encode())
    out += b"".join(_ld(5, t) for t in initializers)
    out += b"".join(_ld(11, value_info(n, s)) for n, s in inputs)
    out += b"".join(_ld(12, value_info(n, s)) for n, s in outputs)
    return out


def model_proto(graph: bytes, producer: str = "b4export") -> bytes:
    opset = _ld(1, b"") + _vint(2, OPSET_VERSION)
    return _vint(1, 8) + _ld(2, producer.encode()) + _ld(7, graph) + _ld(8, opset)
