"""Feature-extraction backbones: ONNX-backed and deterministic stub."""

import json
from dataclasses import dataclass

import numpy as np

from . import onnxlite
from .errors import InferenceError, ModelLoadError, ProbeFailure, ShapeMismatch

INPUT_SIZE = 380

STUB_CHANNELS = 16
STUB_GRID = (12, 12)


@dataclass
class Backbone:
    """A fixed feature extractor mapping a (3, 380, 380) tensor to a feature map.

    ``infer_fn`` does the actual work; ``output_shape`` is (C, H', W').
    ``mean``/``std`` are the per-channel normalization constants the tensor
    is expected to have been prepared with.
    """

    model_id: str
    kind: str
    mean: tuple
    std: tuple
    output_shape: tuple
    infer_fn: object

    @property
    def input_shape(self):
        return (3, INPUT_SIZE, INPUT_SIZE)


def make_stub_backbone(seed: int = 0, channels: int = STUB_CHANNELS, grid=STUB_GRID) -> Backbone:
    """Build a deterministic test backbone with no learned weights.

    The input is partitioned into a ``grid`` of cells; each cell yields the
    statistics [mean R, mean G, mean B, intensity variance], and channel c of
    the output is that vector projected onto a seeded random unit direction.
    Each output location therefore depends only on its own image region.
    """
    gh, gw = grid
    if channels < 1 or gh < 1 or gw < 1:
        raise ValueError("channels and grid sizes must be positive")
    rng = np.random.default_rng(seed)
    proj = rng.normal(size=(channels, 4))
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)

    row_sizes = np.array([len(c) for c in np.array_split(np.arange(INPUT_SIZE), gh)])
    col_sizes = np.array([len(c) for c in np.array_split(np.arange(INPUT_SIZE), gw)])
    row_edges = np.concatenate([[0], np.cumsum(row_sizes)[:-1]])
    col_edges = np.concatenate([[0], np.cumsum(col_sizes)[:-1]])
    area = row_sizes[:, None] * col_sizes[None, :]

    def cell_mean(plane):
        sums = np.add.reduceat(np.add.reduceat(plane, row_edges, axis=0), col_edges, axis=1)
        return sums / area

    def infer(tensor):
        t = tensor.astype(np.float64)
        stats = np.empty((gh, gw, 4))
        for c in range(3):
            stats[:, :, c] = cell_mean(t[c])
        intensity = t.mean(axis=0)
        mean_i = cell_mean(intensity)
        stats[:, :, 3] = cell_mean(intensity * intensity) - mean_i * mean_i
        out = np.einsum("hwk,ck->chw", stats, proj)
        return out.astype(np.float32)

    return Backbone(
        model_id=f"stub-s{seed}-c{channels}-g{gh}x{gw}",
        kind="stub",
        mean=(0.0, 0.0, 0.0),
        std=(1.0, 1.0, 1.0),
        output_shape=(channels, gh, gw),
        infer_fn=infer,
    )


def stub_metadata(seed: int = 0, channels: int = STUB_CHANNELS, grid=STUB_GRID) -> dict:
    """Metadata dict that ``load_backbone`` reconstructs the same stub from."""
    gh, gw = grid
    return {
        "model_id": f"stub-s{seed}-c{channels}-g{gh}x{gw}",
        "kind": "stub",
        "seed": int(seed),
        "mean": [0.0, 0.0, 0.0],
        "std": [1.0, 1.0, 1.0],
        "output_shape": [int(channels), int(gh), int(gw)],
    }


def _load_metadata(meta_path) -> dict:
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise ModelLoadError(f"cannot read metadata {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelLoadError(f"metadata {meta_path} is not valid JSON: {exc}") from exc
    for key in ("model_id", "kind", "mean", "std", "output_shape"):
        if key not in meta:
            raise ModelLoadError(f"metadata {meta_path} missing key {key!r}")
    if len(meta["mean"]) != 3 or len(meta["std"]) != 3:
        raise ModelLoadError("mean and std must each have 3 entries")
    if len(meta["output_shape"]) != 3:
        raise ModelLoadError("output_shape must be [C, H, W]")
    return meta


def load_backbone(model_path, meta_path) -> Backbone:
    """Load a backbone from a model file plus its JSON metadata sidecar.

    ``kind: "stub"`` needs no model file (pass None); ``kind: "onnx"``
    parses and evaluates the model with the built-in runtime.  A probe
    inference on a zero tensor must produce the declared output shape.
    """
    meta = _load_metadata(meta_path)
    kind = meta["kind"]
    out_shape = tuple(int(v) for v in meta["output_shape"])

    if kind == "stub":
        if "seed" not in meta:
            raise ModelLoadError("stub metadata missing key 'seed'")
        backbone = make_stub_backbone(int(meta["seed"]), out_shape[0], out_shape[1:])
        backbone.model_id = meta["model_id"]
    elif kind == "onnx":
        if model_path is None:
            raise ModelLoadError("onnx backbone requires a model file")
        graph = onnxlite.load_model(model_path)
        if not graph.inputs or not graph.outputs:
            raise ModelLoadError("model graph declares no inputs or outputs")
        in_name, in_shape = graph.inputs[0]
        spatial = [d for d in in_shape if d > 1]
        if spatial and spatial != [3, INPUT_SIZE, INPUT_SIZE]:
            raise ShapeMismatch(
                f"model expects input shape {in_shape}, need (3, {INPUT_SIZE}, {INPUT_SIZE})"
            )
        out_name = graph.outputs[0][0]

        def infer(tensor, _graph=graph, _in=in_name, _out=out_name):
            result = onnxlite.evaluate(_graph, {_in: tensor[None].astype(np.float32)})
            if _out not in result:
                raise InferenceError(f"model produced no tensor named {_out!r}")
            out = result[_out]
            if out.ndim == 4 and out.shape[0] == 1:
                out = out[0]
            return out

        backbone = Backbone(
            model_id=meta["model_id"],
            kind="onnx",
            mean=tuple(float(v) for v in meta["mean"]),
            std=tuple(float(v) for v in meta["std"]),
            output_shape=out_shape,
            infer_fn=infer,
        )
    else:
        raise ModelLoadError(f"unknown backbone kind {kind!r}")

    backbone.mean = tuple(float(v) for v in meta["mean"])
    backbone.std = tuple(float(v) for v in meta["std"])

    probe = backbone.infer_fn(np.zeros((3, INPUT_SIZE, INPUT_SIZE), dtype=np.float32))
    if tuple(probe.shape) != out_shape:
        raise ProbeFailure(
            f"probe produced shape {tuple(probe.shape)}, metadata declares {out_shape}"
        )
    return backbone


def extract_feature_map(backbone: Backbone, tensor: np.ndarray) -> np.ndarray:
    """Run the backbone on one prepared tensor; returns (C, H', W') float32."""
    tensor = np.asarray(tensor)
    if tensor.shape != backbone.input_shape:
        raise ShapeMismatch(
            f"tensor shape {tensor.shape} does not match input {backbone.input_shape}"
        )
    try:
        fm = backbone.infer_fn(tensor.astype(np.float32))
    except InferenceError:
        raise
    except Exception as exc:
        raise InferenceError(f"backbone inference failed: {exc}") from exc
    fm = np.asarray(fm, dtype=np.float32)
    if tuple(fm.shape) != tuple(backbone.output_shape):
        raise InferenceError(
            f"inference produced shape {fm.shape}, expected {backbone.output_shape}"
        )
    return fm


def global_pool(feature_map: np.ndarray) -> np.ndarray:
    """Spatially average a (C, H', W') map and L2-normalize to a unit vector.

    An all-zero map has no direction; the zero vector is returned unchanged
    so callers can detect it (its norm is 0, not 1).
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim != 3:
        raise ShapeMismatch(f"feature map must be 3-d, got shape {fm.shape}")
    pooled = fm.mean(axis=(1, 2))
    norm = np.linalg.norm(pooled)
    if norm < 1e-12:
        return np.zeros_like(pooled)
    return pooled / norm
