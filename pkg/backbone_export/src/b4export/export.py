"""Truncate EfficientNet-B4 at a block boundary and serialize it.

The serialized graph uses input "input" [1, 3, 380, 380] and output
"features" [1, C, H', W'], and the metadata JSON written next to it is
exactly what the detector's model loader consumes.  The tap index counts
top-level blocks of the feature extractor: 1 through 7, with the stem and
the head convolution excluded.
"""

import hashlib
import json
import operator
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.fx
from torch import nn
from torchvision.models import efficientnet_b4
from torchvision.ops import stochastic_depth as _stochastic_depth

from .errors import ExportValidationFailure, WeightsUnavailable
from .protowrite import (
    attr_float,
    attr_int,
    attr_ints,
    graph_proto,
    model_proto,
    node_proto,
    tensor_proto,
)

INPUT_SIZE = 380
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]
VALID_TAPS = range(1, 8)

_ADD_FNS = (operator.add, operator.iadd, torch.add)
_MUL_FNS = (operator.mul, operator.imul, torch.mul)


@dataclass
class ExportManifest:
    model_id: str
    kind: str
    tap: int
    tap_node: str
    input_size: int
    output_shape: list
    mean: list
    std: list
    weights: str

    def to_dict(self) -> dict:
        return asdict(self)


def _load_network(weights, seed: int):
    """Build the source network; returns (net, provenance, short tag)."""
    if weights == "imagenet":
        try:
            from torchvision.models import EfficientNet_B4_Weights

            net = efficientnet_b4(weights=EfficientNet_B4_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise WeightsUnavailable(
                f"cannot retrieve pretrained weights: {exc}"
            ) from exc
        return net, "imagenet-v1", "imagenet"
    if weights is not None:
        path = Path(weights)
        try:
            raw = path.read_bytes()
            state = torch.load(path, map_location="cpu", weights_only=True)
        except (OSError, RuntimeError) as exc:
            raise WeightsUnavailable(f"cannot load weights from {path}: {exc}") from exc
        net = efficientnet_b4()
        try:
            net.load_state_dict(state)
        except RuntimeError as exc:
            raise WeightsUnavailable(f"{path} is not a B4 state dict: {exc}") from exc
        digest = hashlib.sha256(raw).hexdigest()[:8]
        return net, f"file:{path} sha256:{digest}", f"sha{digest}"
    torch.manual_seed(seed)
    return efficientnet_b4(), f"random-init seed={seed}", f"rand{seed}"


def _conv_node(name: str, mod: nn.Conv2d, x: str, inits: list) -> bytes:
    if mod.dilation != (1, 1) or mod.padding_mode != "zeros" or mod.transposed:
        raise ExportValidationFailure(
            f"convolution {name} uses an unsupported configuration"
        )
    ph, pw = mod.padding
    wname = f"{name}.weight"
    inits.append(tensor_proto(wname, mod.weight.detach().numpy()))
    inputs = [x, wname]
    if mod.bias is not None:
        bname = f"{name}.bias"
        inits.append(tensor_proto(bname, mod.bias.detach().numpy()))
        inputs.append(bname)
    attrs = [
        attr_ints("kernel_shape", mod.kernel_size),
        attr_ints("strides", mod.stride),
        attr_ints("pads", [ph, pw, ph, pw]),
        attr_int("group", mod.groups),
    ]
    return node_proto("Conv", inputs, [name], attrs, name=name)


def _bn_node(name: str, mod: nn.BatchNorm2d, x: str, inits: list) -> bytes:
    params = {
        "scale": mod.weight, "bias": mod.bias,
        "mean": mod.running_mean, "var": mod.running_var,
    }
    inputs = [x]
    for suffix, tensor in params.items():
        pname = f"{name}.{suffix}"
        inits.append(tensor_proto(pname, tensor.detach().numpy()))
        inputs.append(pname)
    return node_proto("BatchNormalization", inputs, [name],
                      [attr_float("epsilon", mod.eps)], name=name)


def _emit(gm: torch.fx.GraphModule):
    """Walk the traced graph and emit serialized nodes + initializers."""
    nodes = []
    inits = []
    alias = {}

    def tensor_of(arg) -> str:
        if not isinstance(arg, torch.fx.Node):
            raise ExportValidationFailure(f"non-tensor operand {arg!r}")
        return alias[arg.name]

    for node in gm.graph.nodes:
        if node.op == "placeholder":
            alias[node.name] = "input"
        elif node.op == "call_module":
            mod = gm.get_submodule(node.target)
            x = tensor_of(node.args[0])
            if isinstance(mod, nn.Conv2d):
                nodes.append(_conv_node(node.name, mod, x, inits))
            elif isinstance(mod, nn.BatchNorm2d):
                nodes.append(_bn_node(node.name, mod, x, inits))
            elif isinstance(mod, nn.SiLU):
                gate = f"{node.name}_gate"
                nodes.append(node_proto("Sigmoid", [x], [gate]))
                nodes.append(node_proto("Mul", [x, gate], [node.name]))
            elif isinstance(mod, nn.Sigmoid):
                nodes.append(node_proto("Sigmoid", [x], [node.name]))
            elif isinstance(mod, nn.AdaptiveAvgPool2d):
                if mod.output_size not in (1, (1, 1)):
                    raise ExportValidationFailure(
                        f"pooling to {mod.output_size} has no serialized form"
                    )
                nodes.append(node_proto("GlobalAveragePool", [x], [node.name]))
            elif isinstance(mod, nn.Identity):
                alias[node.name] = x
                continue
            else:
                raise ExportValidationFailure(
                    f"module {type(mod).__name__} has no serialized form"
                )
            alias[node.name] = node.name
        elif node.op == "call_function":
            if node.target in _ADD_FNS:
                nodes.append(node_proto(
                    "Add", [tensor_of(node.args[0]), tensor_of(node.args[1])],
                    [node.name]))
                alias[node.name] = node.name
            elif node.target in _MUL_FNS:
                nodes.append(node_proto(
                    "Mul", [tensor_of(node.args[0]), tensor_of(node.args[1])],
                    [node.name]))
                alias[node.name] = node.name
            elif node.target is _stochastic_depth:
                # inference-time identity; the trace bakes training=False in
                if len(node.args) > 3 and node.args[3]:
                    raise ExportValidationFailure(
                        "network must be in eval mode before export"
                    )
                alias[node.name] = tensor_of(node.args[0])
            else:
                raise ExportValidationFailure(
                    f"function {getattr(node.target, '__name__', node.target)} "
                    "has no serialized form"
                )
        elif node.op == "output":
            nodes.append(node_proto("Identity", [tensor_of(node.args[0])],
                                    ["features"]))
        else:
            raise ExportValidationFailure(f"unsupported graph entry {node.op}")
    return nodes, inits


def _validate(model_path, meta_path, reference: np.ndarray):
    """Reload through the detector's loader and compare a zero-input probe."""
    from adws.backbone import extract_feature_map, load_backbone
    from adws.errors import AdwsError

    try:
        backbone = load_backbone(model_path, meta_path)
        got = extract_feature_map(
            backbone, np.zeros((3, INPUT_SIZE, INPUT_SIZE), dtype=np.float32)
        )
    except AdwsError as exc:
        raise ExportValidationFailure(
            f"exported model failed to load: {exc}"
        ) from exc
    err = float(np.max(np.abs(got - reference)))
    if err > 1e-4:
        raise ExportValidationFailure(
            f"zero-input probe disagrees with the source network "
            f"(max |diff| {err:.3g})"
        )


def build_trunk(net: nn.Module, tap: int) -> nn.Module:
    """The sub-network ending at the tapped block, in eval mode."""
    return nn.Sequential(*list(net.features.children())[: tap + 1]).eval()


def export_backbone(tap: int = 7, out_model="backbone.onnx",
                    out_meta="backbone.json", weights="imagenet",
                    seed: int = 0) -> ExportManifest:
    """Serialize the truncated backbone plus its metadata JSON.

    ``weights`` is "imagenet" for the pretrained checkpoint, a path to a
    saved state dict, or None for a seeded random initialization (useful
    for offline validation).  The exported file is probed through the
    detector's own loader before this returns.
    """
    if tap not in VALID_TAPS:
        raise WeightsUnavailable(
            f"no block at tap {tap}; valid taps are "
            f"{VALID_TAPS.start}..{VALID_TAPS.stop - 1}"
        )
    net, provenance, tag = _load_network(weights, seed)
    trunk = build_trunk(net, tap)
    with torch.no_grad():
        probe = trunk(torch.zeros(1, 3, INPUT_SIZE, INPUT_SIZE)).numpy()[0]
    out_shape = [int(d) for d in probe.shape]

    nodes, inits = _emit(torch.fx.symbolic_trace(trunk))
    graph = graph_proto(
        nodes, inits,
        inputs=[("input", [1, 3, INPUT_SIZE, INPUT_SIZE])],
        outputs=[("features", [1] + out_shape)],
    )
    Path(out_model).write_bytes(model_proto(graph))

    manifest = ExportManifest(
        model_id=f"efficientnet-b4-b{tap}-{tag}",
        kind="onnx",
        tap=tap,
        tap_node=f"features.{tap}",
        input_size=INPUT_SIZE,
        output_shape=out_shape,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
        weights=provenance,
    )
    Path(out_meta).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    _validate(out_model, out_meta, probe)
    return manifest
