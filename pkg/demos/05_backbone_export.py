"""
Exporting a convolutional backbone
==================================

Export a truncated EfficientNet-B4 trunk to the self-contained model format
the detector loads, then run the exported file through the detector's own
loader and compare it against the source network.

Requires torch and torchvision plus the b4export package
(pip install -e backbone_export).
"""

import sys
import tempfile
from pathlib import Path

try:
    import torch
    from b4export import export_backbone
    from b4export.export import build_trunk, _load_network
except ImportError as exc:
    print(f"skipping: {exc}")
    sys.exit(0)

import numpy as np

from adws import extract_feature_map, load_backbone

out = Path(tempfile.mkdtemp(prefix="b4export-demo-"))

# random init keeps the demo offline; pass weights="imagenet" for the
# pretrained network when downloads are available
manifest = export_backbone(
    tap=2,
    out_model=out / "backbone.onnx",
    out_meta=out / "backbone.json",
    weights=None,
    seed=5,
)
print(f"exported {manifest.model_id}: tap {manifest.tap} ({manifest.tap_node}), "
      f"output {manifest.output_shape}")

# load it back through the detector's external interface
backbone = load_backbone(out / "backbone.onnx", out / "backbone.json")
x = np.random.default_rng(0).normal(size=(3, 380, 380)).astype(np.float32)
got = extract_feature_map(backbone, x)
print(f"detector-side forward pass: {got.shape}")

# same input through the source torch trunk
net, _, _ = _load_network(None, seed=5)
trunk = build_trunk(net, 2)
with torch.no_grad():
    want = trunk(torch.from_numpy(x)[None])[0].numpy()
print(f"max deviation from the source network: {np.abs(got - want).max():.2e}")
