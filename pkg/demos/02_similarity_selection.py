"""
Selecting similar training images
=================================

Build a feature dictionary over a corpus containing two visually distinct
families of images, then pick the training subset that matches one test
image, with both selectors: cosine similarity over pooled embeddings and
keypoint match fraction.
"""

import tempfile
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from adws import (
    build_dictionary,
    load_dictionary,
    load_image,
    make_stub_backbone,
    save_dictionary,
    scan_dataset,
    select_subset,
)
from adws.ingest import Image, encode_png
from adws.selection import image_features


def texture(seed):
    # smoothed noise, normalized to [0, 1]
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.normal(size=(256, 256)), sigma=3.0)
    return (t - t.min()) / (t.max() - t.min())


def render(base, tint, jitter):
    # one photograph of a product: its texture, a color cast, and a
    # small exposure wobble
    rgb = np.stack([base * c for c in tint], axis=-1)
    return np.clip(rgb * jitter * 255.0, 0, 255).astype(np.uint8)


# two product families: same factory, different surface and color
root = Path(tempfile.mkdtemp(prefix="adws-demo-"))
(root / "train").mkdir()
(root / "test_normal").mkdir()
(root / "test_anomalous").mkdir()

base_warm, base_cool = texture(8), texture(21)
rng = np.random.default_rng(0)
for i in range(4):
    img = render(base_warm, (1.0, 0.85, 0.7), 0.95 + 0.1 * rng.random())
    (root / "train" / f"warm_{i}.png").write_bytes(encode_png(Image(data=img)))
    img = render(base_cool, (0.7, 0.85, 1.0), 0.95 + 0.1 * rng.random())
    (root / "train" / f"cool_{i}.png").write_bytes(encode_png(Image(data=img)))
probe = render(base_warm, (1.0, 0.85, 0.7), 1.0)
(root / "test_normal" / "probe.png").write_bytes(encode_png(Image(data=probe)))

idx = scan_dataset(root, layout="flat")
print(f"corpus at {root}: {len(idx.train_images)} train, {len(idx.test_images)} test")

# the stub backbone pools color statistics per grid cell; it stands in for
# a real convolutional network so everything here runs in seconds
backbone = make_stub_backbone(seed=0)
d = build_dictionary(idx, backbone, with_sift=True)
print(f"dictionary: {len(d.entries)} entries for backbone {d.model_id}")

# dictionaries round-trip through a single binary file plus a JSON sidecar
dict_path = root / "train.fdic"
save_dictionary(d, dict_path)
d = load_dictionary(dict_path, expected_model_id=backbone.model_id)
print(f"reloaded {len(d.ids)} entries from {dict_path.name}")

# featurize the test image the same way the dictionary entries were
img = load_image(idx.test_images[0].path)
pooled, fm, feats = image_features(img, backbone, None, with_sift=True)
print(f"test image: pooled {pooled.shape}, feature map {fm.shape}, "
      f"{len(feats.keypoints)} keypoints")

# cosine selection compares pooled embeddings; the coarse color statistics
# rate both families fairly similar, so the default threshold keeps all
sel = select_subset(d, pooled, None, selector="cosine")
print(f"cosine sp={sel.sp}: kept {len(sel.selected_ids)}/{len(d.ids)}")
for i in sorted(sel.scores):
    print(f"  {i}: {sel.scores[i]:.4f}")

# a stricter threshold isolates the matching family
strict = select_subset(d, pooled, None, selector="cosine", sp=0.99)
print(f"cosine sp=0.99: kept {sorted(strict.selected_ids)}")

# the keypoint selector matches local structure, which the families do not
# share at all, so it separates them sharply at the default threshold.
# (if nothing cleared the threshold it would fall back to the closest few
# and warn, rather than leave the model with no training data)
sel_kp = select_subset(d, pooled, feats, selector="sift-flann")
print(f"sift-flann sp={sel_kp.sp}: kept {len(sel_kp.selected_ids)}/{len(d.ids)}")
for i in sorted(sel_kp.scores):
    print(f"  {i}: {sel_kp.scores[i]:.4f}")
