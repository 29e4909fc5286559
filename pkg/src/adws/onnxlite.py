"""Self-contained ONNX model reader and numpy evaluator.

Parses the protobuf wire format directly and evaluates the small operator
subset used by the exported feature-extraction graphs: Conv,
BatchNormalization, Sigmoid, Mul, Add, GlobalAveragePool, Relu, Identity.
No onnx or onnxruntime dependency.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InferenceError, ModelLoadError

# TensorProto.DataType values
_DTYPE_FLOAT = 1
_DTYPE_INT64 = 7
_DTYPE_DOUBLE = 11

_SUPPORTED_OPS = (
    "Conv",
    "BatchNormalization",
    "Sigmoid",
    "Mul",
    "Add",
    "GlobalAveragePool",
    "Relu",
    "Identity",
)


# --- protobuf wire-format primitives ---------------------------------------

def _read_varint(buf: bytes, pos: int):
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadError("truncated protobuf varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelLoadError("malformed protobuf varint")


def _iter_fields(buf: bytes):
    """Yield (field_number, wire_type, value) over one message's fields."""
    pos = 0
    while pos < len(buf):
        key, pos = _read_varint(buf, pos)
        field_num = key >> 3
        wire_type = key & 0x7
        if wire_type == 0:
            value, pos = _read_varint(buf, pos)
        elif wire_type == 1:
            value = buf[pos : pos + 8]
            pos += 8
        elif wire_type == 2:
            length, pos = _read_varint(buf, pos)
            value = buf[pos : pos + length]
            if len(value) != length:
                raise ModelLoadError("truncated length-delimited protobuf field")
            pos += length
        elif wire_type == 5:
            value = buf[pos : pos + 4]
            pos += 4
        else:
            raise ModelLoadError(f"unsupported protobuf wire type {wire_type}")
        yield field_num, wire_type, value


def _signed(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


# --- ONNX message parsing ---------------------------------------------------

@dataclass
class OnnxNode:
    op_type: str = ""
    name: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    attrs: dict = field(default_factory=dict)


@dataclass
class OnnxGraph:
    name: str = ""
    nodes: list = field(default_factory=list)
    initializers: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)   # (name, shape) pairs
    outputs: list = field(default_factory=list)


def _parse_tensor(buf: bytes):
    dims = []
    data_type = _DTYPE_FLOAT
    raw = b""
    floats = []
    int64s = []
    name = ""
    for num, wt, val in _iter_fields(buf):
        if num == 1:
            dims.append(_signed(val))
        elif num == 2:
            data_type = val
        elif num == 4:
            if wt == 2:  # packed floats
                floats.extend(struct.unpack(f"<{len(val) // 4}f", val))
            else:
                floats.append(struct.unpack("<f", val)[0])
        elif num == 7:
            if wt == 2:
                pos = 0
                while pos < len(val):
                    v, pos = _read_varint(val, pos)
                    int64s.append(_signed(v))
            else:
                int64s.append(_signed(val))
        elif num == 8:
            name = val.decode()
        elif num == 9:
            raw = val
    if raw:
        if data_type == _DTYPE_FLOAT:
            arr = np.frombuffer(raw, dtype="<f4")
        elif data_type == _DTYPE_INT64:
            arr = np.frombuffer(raw, dtype="<i8")
        elif data_type == _DTYPE_DOUBLE:
            arr = np.frombuffer(raw, dtype="<f8")
        else:
            raise ModelLoadError(f"unsupported tensor data type {data_type}")
    elif floats:
        arr = np.array(floats, dtype=np.float32)
    elif int64s:
        arr = np.array(int64s, dtype=np.int64)
    else:
        arr = np.zeros(0, dtype=np.float32)
    return name, arr.reshape(dims) if dims else arr


def _parse_attribute(buf: bytes):
    name = ""
    value = None
    ints = []
    floats = []
    for num, wt, val in _iter_fields(buf):
        if num == 1:
            name = val.decode()
        elif num == 2:
            value = struct.unpack("<f", val)[0]
        elif num == 3:
            value = _signed(val)
        elif num == 4:
            value = val.decode()
        elif num == 5:
            value = _parse_tensor(val)[1]
        elif num == 7:
            if wt == 2:
                floats.extend(struct.unpack(f"<{len(val) // 4}f", val))
            else:
                floats.append(struct.unpack("<f", val)[0])
        elif num == 8:
            if wt == 2:
                pos = 0
                while pos < len(val):
                    v, pos = _read_varint(val, pos)
                    ints.append(_signed(v))
            else:
                ints.append(_signed(val))
    if ints:
        value = ints
    elif floats:
        value = floats
    return name, value


def _parse_value_info(buf: bytes):
    name = ""
    shape = []
    for num, _, val in _iter_fields(buf):
        if num == 1:
            name = val.decode()
        elif num == 2:
            for tnum, _, tval in _iter_fields(val):
                if tnum == 1:  # tensor_type
                    for fnum, _, fval in _iter_fields(tval):
                        if fnum == 2:  # shape
                            for dnum, _, dval in _iter_fields(fval):
                                if dnum == 1:  # dim
                                    dim_value = -1
                                    for ddnum, _, ddval in _iter_fields(dval):
                                        if ddnum == 1:
                                            dim_value = _signed(ddval)
                                    shape.append(dim_value)
    return name, shape


def _parse_node(buf: bytes) -> OnnxNode:
    node = OnnxNode()
    for num, _, val in _iter_fields(buf):
        if num == 1:
            node.inputs.append(val.decode())
        elif num == 2:
            node.outputs.append(val.decode())
        elif num == 3:
            node.name = val.decode()
        elif num == 4:
            node.op_type = val.decode()
        elif num == 5:
            attr_name, attr_val = _parse_attribute(val)
            node.attrs[attr_name] = attr_val
    return node


def _parse_graph(buf: bytes) -> OnnxGraph:
    graph = OnnxGraph()
    for num, _, val in _iter_fields(buf):
        if num == 1:
            graph.nodes.append(_parse_node(val))
        elif num == 2:
            graph.name = val.decode()
        elif num == 5:
            name, arr = _parse_tensor(val)
            graph.initializers[name] = arr
        elif num == 11:
            graph.inputs.append(_parse_value_info(val))
        elif num == 12:
            graph.outputs.append(_parse_value_info(val))
    return graph


def load_model(path) -> OnnxGraph:
    """Parse an ONNX file into an ``OnnxGraph``; validates the op subset."""
    try:
        data = open(path, "rb").read()
    except OSError as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from exc
    graph = None
    for num, _, val in _iter_fields(data):
        if num == 7:
            graph = _parse_graph(val)
    if graph is None or not graph.nodes:
        raise ModelLoadError(f"{path} contains no ONNX graph")
    for node in graph.nodes:
        if node.op_type not in _SUPPORTED_OPS:
            raise ModelLoadError(
                f"unsupported op {node.op_type!r}; this runtime handles {_SUPPORTED_OPS}"
            )
    return graph


# --- evaluation -------------------------------------------------------------

def _conv(x, w, b, attrs):
    group = attrs.get("group", 1)
    strides = attrs.get("strides", [1, 1])
    pads = attrs.get("pads", [0, 0, 0, 0])
    dilations = attrs.get("dilations", [1, 1])
    if any(d != 1 for d in dilations):
        raise InferenceError("dilated convolutions not supported")
    sh, sw = strides
    pt, pl, pb, pr = pads
    if pt or pl or pb or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    kh, kw = w.shape[2], w.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::sh, ::sw]
    cin = x.shape[1]
    cout = w.shape[0]
    if group == 1:
        out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
    elif group == cin and w.shape[1] == 1:
        out = np.einsum("nchwij,cij->nchw", windows, w[:, 0], optimize=True)
    else:
        parts = []
        cin_g = cin // group
        cout_g = cout // group
        for g in range(group):
            win_g = windows[:, g * cin_g : (g + 1) * cin_g]
            w_g = w[g * cout_g : (g + 1) * cout_g]
            parts.append(np.einsum("nchwij,ocij->nohw", win_g, w_g, optimize=True))
        out = np.concatenate(parts, axis=1)
    if b is not None:
        out = out + b[None, :, None, None]
    return out.astype(np.float32)


def _batch_norm(x, scale, bias, mean, var, attrs):
    eps = attrs.get("epsilon", 1e-5)
    inv = scale / np.sqrt(var + eps)
    return (x - mean[None, :, None, None]) * inv[None, :, None, None] + bias[None, :, None, None]


def evaluate(graph: OnnxGraph, inputs: dict) -> dict:
    """Run the graph on named input arrays; returns all named outputs."""
    values = dict(graph.initializers)
    values.update({k: np.asarray(v, dtype=np.float32) for k, v in inputs.items()})

    def get(name):
        if name not in values:
            raise InferenceError(f"missing tensor {name!r} during evaluation")
        return values[name]

    for node in graph.nodes:
        op = node.op_type
        try:
            if op == "Conv":
                x = get(node.inputs[0])
                w = get(node.inputs[1])
                b = get(node.inputs[2]) if len(node.inputs) > 2 else None
                out = _conv(x, w, b, node.attrs)
            elif op == "BatchNormalization":
                out = _batch_norm(*(get(n) for n in node.inputs[:5]), node.attrs)
            elif op == "Sigmoid":
                out = 1.0 / (1.0 + np.exp(-get(node.inputs[0])))
            elif op == "Mul":
                out = get(node.inputs[0]) * get(node.inputs[1])
            elif op == "Add":
                out = get(node.inputs[0]) + get(node.inputs[1])
            elif op == "GlobalAveragePool":
                out = get(node.inputs[0]).mean(axis=(2, 3), keepdims=True)
            elif op == "Relu":
                out = np.maximum(get(node.inputs[0]), 0.0)
            elif op == "Identity":
                out = get(node.inputs[0])
            else:
                raise InferenceError(f"unsupported op {op!r}")
        except InferenceError:
            raise
        except Exception as exc:
            raise InferenceError(f"node {node.name or op} failed: {exc}") from exc
        values[node.outputs[0]] = np.asarray(out, dtype=np.float32)

    return {name: values[name] for name, _ in graph.outputs if name in values}
