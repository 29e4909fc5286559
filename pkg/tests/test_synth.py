"""Synthetic corpus generator tests: layout, determinism, defect geometry."""

import json

import numpy as np
import pytest

from adws.ingest import load_image, scan_dataset
from adws.synth import SIZE, defect_cells, generate_corpus


def test_corpus_layout_and_manifest(tmp_path):
    out = tmp_path / "corpus"
    manifest = generate_corpus(out, normals=4, anomalies=4, seed=0, train=6)
    assert sorted(p.name for p in (out / "train").iterdir()) == \
        [f"train_{i:03d}.png" for i in range(6)]
    assert len(list((out / "test_normal").iterdir())) == 4
    assert len(list((out / "test_anomalous").iterdir())) == 4
    on_disk = json.loads((out / "synth_manifest.json").read_text())
    assert on_disk == manifest
    assert manifest["size"] == SIZE
    assert len(manifest["train"]) == 6
    assert len(manifest["test"]) == 8
    labels = {e["label"] for e in manifest["test"]}
    assert labels == {"normal", "anomalous"}
    for e in manifest["test"]:
        if e["label"] == "normal":
            assert e["defect"] is None
        else:
            assert e["defect"]["kind"] in ("square", "scratch")


def test_images_decode_to_canvas_size(tmp_path):
    out = tmp_path / "corpus"
    generate_corpus(out, normals=1, anomalies=1, seed=3, train=3)
    img = load_image(out / "train" / "train_000.png")
    assert img.data.shape == (SIZE, SIZE, 3)
    assert img.data.dtype == np.uint8


def test_same_seed_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_corpus(a, normals=2, anomalies=2, seed=7, train=3)
    generate_corpus(b, normals=2, anomalies=2, seed=7, train=3)
    for rel in sorted(p.relative_to(a) for p in a.rglob("*.png")):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    assert (a / "synth_manifest.json").read_text() == (b / "synth_manifest.json").read_text()


def test_different_seeds_differ(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_corpus(a, normals=0, anomalies=0, seed=0, train=1)
    generate_corpus(b, normals=0, anomalies=0, seed=1, train=1)
    assert (a / "train" / "train_000.png").read_bytes() != \
        (b / "train" / "train_000.png").read_bytes()


def test_defect_bboxes_in_bounds_and_visible(tmp_path):
    out = tmp_path / "corpus"
    manifest = generate_corpus(out, normals=0, anomalies=12, seed=1, train=3)
    for e in manifest["test"]:
        x0, y0, x1, y1 = e["defect"]["bbox"]
        assert 0 <= x0 < x1 <= SIZE
        assert 0 <= y0 < y1 <= SIZE
        img = load_image(out / (e["id"] + ".png"))
        patch = img.data[y0:y1, x0:x1].astype(float).mean(axis=2)
        # the injected fill is bright; the box must contain clearly lit pixels
        assert patch.max() > 180


def test_flat_scan_picks_up_corpus(tmp_path):
    out = tmp_path / "corpus"
    generate_corpus(out, normals=2, anomalies=2, seed=0, train=3)
    idx = scan_dataset(out, layout="flat")
    assert len(idx.train_images) == 3
    assert len(idx.test_images) == 4
    labels = sorted(t.label for t in idx.test_images)
    assert labels == ["anomalous", "anomalous", "normal", "normal"]


def test_defect_cells_analytic():
    # 4x4 grid over a 100px canvas: edges at 0,25,50,75,100
    assert defect_cells([0, 0, 10, 10], (4, 4), image_size=100) == {(0, 0)}
    assert defect_cells([20, 20, 30, 30], (4, 4), image_size=100) == \
        {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert defect_cells([0, 0, 100, 100], (2, 2), image_size=100) == \
        {(0, 0), (0, 1), (1, 0), (1, 1)}
    # exact edge touch does not count as intersection
    assert defect_cells([25, 0, 50, 10], (4, 4), image_size=100) == {(0, 1)}


def test_defect_cells_cover_injected_pixels(tmp_path):
    out = tmp_path / "corpus"
    manifest = generate_corpus(out, normals=0, anomalies=6, seed=2, train=3)
    grid = (12, 12)
    for e in manifest["test"]:
        cells = defect_cells(e["defect"]["bbox"], grid)
        assert cells
        for i, j in cells:
            assert 0 <= i < grid[0] and 0 <= j < grid[1]


def test_generate_corpus_validates_counts(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(tmp_path / "x", normals=-1, anomalies=0, train=3)
    with pytest.raises(ValueError):
        generate_corpus(tmp_path / "x", normals=0, anomalies=0, train=0)
