"""Synthetic corpus generator: textured normal images plus injected defects.

Produces a flat-layout dataset (train/, test_normal/, test_anomalous/) of
three distinct "environments" (color palette + fixed speckle texture shared
within the environment), so similarity-based subset selection has real
structure to find.  Anomalous images carry a bright square or scratch line
whose bounding box is recorded in a manifest for localization checks.
"""

import json
from pathlib import Path

import numpy as np

from .ingest import Image, encode_png
from .sift import gaussian_blur

SIZE = 380

# (name, base RGB, shading period range in px)
_ENVIRONMENTS = [
    ("rust", (200, 60, 40), (140, 220)),
    ("steel", (40, 80, 200), (120, 200)),
    ("moss", (90, 200, 90), (160, 260)),
]


def _env_texture(env_index: int, seed: int) -> np.ndarray:
    """Fixed per-environment speckle layer, identical across its images."""
    rng = np.random.default_rng([int(seed), env_index])
    noise = rng.normal(size=(SIZE, SIZE))
    smooth = gaussian_blur(noise, 6.0)
    smooth /= max(np.abs(smooth).max(), 1e-9)
    return smooth * 25.0


def _base_image(env_index: int, textures, rng) -> np.ndarray:
    _, base_rgb, period_range = _ENVIRONMENTS[env_index]
    period = rng.uniform(*period_range)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    ys, xs = np.mgrid[0:SIZE, 0:SIZE]
    wave = np.sin(2.0 * np.pi * (np.cos(angle) * xs + np.sin(angle) * ys) / period + phase)
    shading = 0.85 + 0.12 * wave
    brightness = rng.uniform(0.98, 1.02)
    img = np.empty((SIZE, SIZE, 3))
    for c in range(3):
        img[:, :, c] = base_rgb[c] * shading * brightness
    img += textures[env_index][:, :, None]
    img += rng.normal(scale=3.0, size=img.shape)
    return img


def _inject_square(img: np.ndarray, rng) -> dict:
    side = int(rng.integers(40, 57))
    margin = 24
    y0 = int(rng.integers(margin, SIZE - margin - side))
    x0 = int(rng.integers(margin, SIZE - margin - side))
    fill = rng.uniform(225, 245, size=3)
    img[y0 : y0 + side, x0 : x0 + side] = fill
    return {"kind": "square", "bbox": [x0, y0, x0 + side, y0 + side]}


def _inject_scratch(img: np.ndarray, rng) -> dict:
    margin = 24
    length = rng.uniform(120, 220)
    theta = rng.uniform(0.0, np.pi)
    cy = rng.uniform(margin + length / 2, SIZE - margin - length / 2)
    cx = rng.uniform(margin + length / 2, SIZE - margin - length / 2)
    ax = cx - np.cos(theta) * length / 2
    ay = cy - np.sin(theta) * length / 2
    bx = cx + np.cos(theta) * length / 2
    by = cy + np.sin(theta) * length / 2
    width = rng.uniform(3.0, 5.0)

    ys, xs = np.mgrid[0:SIZE, 0:SIZE]
    dx, dy = bx - ax, by - ay
    seg_sq = dx * dx + dy * dy
    t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / seg_sq, 0.0, 1.0)
    dist = np.hypot(xs - (ax + t * dx), ys - (ay + t * dy))
    mask = dist <= width / 2.0
    img[mask] = rng.uniform(230, 248)
    x0 = int(np.floor(min(ax, bx) - width))
    y0 = int(np.floor(min(ay, by) - width))
    x1 = int(np.ceil(max(ax, bx) + width))
    y1 = int(np.ceil(max(ay, by) + width))
    return {
        "kind": "scratch",
        "bbox": [max(x0, 0), max(y0, 0), min(x1, SIZE), min(y1, SIZE)],
    }


def _finish(img: np.ndarray) -> Image:
    return Image(np.clip(np.round(img), 0, 255).astype(np.uint8))


def generate_corpus(out_dir, normals: int = 40, anomalies: int = 40,
                    seed: int = 0, train: int = 30) -> dict:
    """Write the corpus to ``out_dir`` and return its manifest."""
    if train < 1 or normals < 0 or anomalies < 0:
        raise ValueError("train must be >= 1 and test counts non-negative")
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test_normal").mkdir(parents=True, exist_ok=True)
    (out / "test_anomalous").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    textures = [_env_texture(i, seed) for i in range(len(_ENVIRONMENTS))]
    n_env = len(_ENVIRONMENTS)
    manifest = {"seed": int(seed), "size": SIZE, "train": [], "test": []}

    for i in range(train):
        env = i % n_env  # round-robin so every environment is covered
        img = _finish(_base_image(env, textures, rng))
        name = f"train_{i:03d}.png"
        (out / "train" / name).write_bytes(encode_png(img))
        manifest["train"].append({"id": f"train/train_{i:03d}", "env": _ENVIRONMENTS[env][0]})

    for i in range(normals):
        env = int(rng.integers(0, n_env))
        img = _finish(_base_image(env, textures, rng))
        name = f"normal_{i:03d}.png"
        (out / "test_normal" / name).write_bytes(encode_png(img))
        manifest["test"].append({
            "id": f"test_normal/normal_{i:03d}",
            "label": "normal",
            "env": _ENVIRONMENTS[env][0],
            "defect": None,
        })

    for i in range(anomalies):
        env = int(rng.integers(0, n_env))
        raw = _base_image(env, textures, rng)
        defect = _inject_square(raw, rng) if rng.random() < 0.5 else _inject_scratch(raw, rng)
        img = _finish(raw)
        name = f"anomalous_{i:03d}.png"
        (out / "test_anomalous" / name).write_bytes(encode_png(img))
        manifest["test"].append({
            "id": f"test_anomalous/anomalous_{i:03d}",
            "label": "anomalous",
            "env": _ENVIRONMENTS[env][0],
            "defect": defect,
        })

    with open(out / "synth_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


def defect_cells(bbox, grid_shape, image_size: int = SIZE) -> set:
    """Grid cells a pixel bbox intersects, under the same cell partition the
    stub backbone and the heatmap outline use."""
    gh, gw = grid_shape
    x0, y0, x1, y1 = bbox
    row_edges = np.concatenate(
        [[0], np.cumsum([len(c) for c in np.array_split(np.arange(image_size), gh)])]
    )
    col_edges = np.concatenate(
        [[0], np.cumsum([len(c) for c in np.array_split(np.arange(image_size), gw)])]
    )
    rows = [i for i in range(gh) if row_edges[i] < y1 and row_edges[i + 1] > y0]
    cols = [j for j in range(gw) if col_edges[j] < x1 and col_edges[j + 1] > x0]
    return {(i, j) for i in rows for j in cols}
