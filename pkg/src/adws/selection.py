"""Feature dictionary and per-test-image training subset selection."""

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import Backbone, extract_feature_map, global_pool
from .errors import BackboneMismatch, DictionaryFormatError, EmptyTrainingSet, TooFewDescriptors
from .ingest import Image, bilinear_resize, load_image, resize_normalize
from .kdtree import DescriptorIndex
from .sift import Keypoint, SiftConfig, SiftFeatureSet, sift_config_hash, sift_features

MAGIC = b"FDIC"
FORMAT_VERSION = 1

# descriptor components live in [0, ~0.5] after clipping and renormalization,
# so a scale of 512 uses the full unsigned-byte range
QUANT_SCALE = 512.0

DEFAULT_SP = {"cosine": 0.75, "sift-flann": 0.70}


def quantize_descriptors(desc: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(desc * QUANT_SCALE), 0, 255).astype(np.uint8)


def dequantize_descriptors(q: np.ndarray) -> np.ndarray:
    return q.astype(np.float64) / QUANT_SCALE


@dataclass
class DictEntry:
    image_id: str
    path: str
    pooled: np.ndarray        # (C,) float32 unit vector (or zeros)
    feature_map: np.ndarray   # (C, H', W') float32
    sift: SiftFeatureSet
    _index: DescriptorIndex | None = field(default=None, repr=False, compare=False)

    def descriptor_index(self, mode: str = "approximate", checks: int = 32) -> DescriptorIndex:
        """KD-tree over this entry's descriptors, built once and cached."""
        if self._index is None or self._index.mode != mode or self._index.checks != checks:
            self._index = DescriptorIndex(self.sift.descriptors, mode=mode, checks=checks)
        return self._index


@dataclass
class FeatureDictionary:
    model_id: str
    sift_hash: str
    entries: list

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list:
        return [e.image_id for e in self.entries]

    def check_backbone(self, backbone: Backbone):
        if backbone.model_id != self.model_id:
            raise BackboneMismatch(
                f"dictionary built with {self.model_id!r}, got backbone {backbone.model_id!r}"
            )


def image_features(img: Image, backbone: Backbone, cfg: SiftConfig | None,
                   with_sift: bool = True):
    """Pooled embedding, feature map, and SIFT set for one image.

    SIFT runs on the grayscale of the image resized to the backbone input
    resolution, so test and dictionary keypoints share one coordinate frame.
    """
    tensor = resize_normalize(img, backbone.mean, backbone.std)
    fm = extract_feature_map(backbone, tensor)
    pooled = global_pool(fm).astype(np.float32)
    if with_sift:
        size = backbone.input_shape[1]
        resized = bilinear_resize(img.data, size, size)
        gray = resized.astype(np.float64) @ np.array([0.299, 0.587, 0.114]) / 255.0
        feats = sift_features(gray, cfg)
    else:
        feats = SiftFeatureSet(keypoints=[], descriptors=np.zeros((0, 128)))
    return pooled, fm, feats


def _canonical_sift(feats: SiftFeatureSet) -> SiftFeatureSet:
    """Project a SIFT set onto what serialization preserves.

    Descriptors quantize to 8 bits and keypoints keep only
    (x, y, sigma, orientation) as f32, so a freshly built dictionary
    round-trips through disk to an equal in-memory value.
    """
    kps = [
        Keypoint(
            x=float(np.float32(k.x)), y=float(np.float32(k.y)),
            sigma=float(np.float32(k.sigma)),
            orientation=float(np.float32(k.orientation)),
        )
        for k in feats.keypoints
    ]
    desc = dequantize_descriptors(quantize_descriptors(feats.descriptors))
    return SiftFeatureSet(keypoints=kps, descriptors=desc)


def build_dictionary(idx, backbone: Backbone, cfg: SiftConfig | None = None,
                     with_sift: bool = True) -> FeatureDictionary:
    """Extract and store features for every training image.

    Entry order follows sorted path order, so rebuilding from the same data
    yields the same dictionary.  ``with_sift=False`` skips keypoint
    extraction for cosine-only workflows.
    """
    cfg = cfg or SiftConfig()
    train = sorted(idx.train_images, key=lambda e: str(e.path))
    if not train:
        raise EmptyTrainingSet("no training images to build a dictionary from")
    entries = []
    for item in train:
        img = load_image(item.path)
        pooled, fm, feats = image_features(img, backbone, cfg, with_sift=with_sift)
        entries.append(DictEntry(
            image_id=item.image_id,
            path=str(item.path),
            pooled=pooled,
            feature_map=fm,
            sift=_canonical_sift(feats),
        ))
    return FeatureDictionary(
        model_id=backbone.model_id,
        sift_hash=sift_config_hash(cfg),
        entries=entries,
    )


# --- serialization ----------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise DictionaryFormatError(f"string too long to serialize ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DictionaryFormatError("dictionary file truncated")
    return data


def _unpack_str(fh) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, n).decode("utf-8")


def save_dictionary(d: FeatureDictionary, path):
    """Write the binary dictionary plus a JSON manifest sidecar."""
    path = Path(path)
    manifest = {
        "format": MAGIC.decode(),
        "version": FORMAT_VERSION,
        "model_id": d.model_id,
        "sift_config_hash": d.sift_hash,
        "entries": [],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(_pack_str(d.model_id))
        fh.write(_pack_str(d.sift_hash))
        fh.write(struct.pack("<I", len(d.entries)))
        for e in d.entries:
            fh.write(_pack_str(e.image_id))
            fh.write(_pack_str(e.path))
            pooled = np.asarray(e.pooled, dtype="<f4")
            fh.write(struct.pack("<I", pooled.size))
            fh.write(pooled.tobytes())
            fm = np.asarray(e.feature_map, dtype="<f4")
            fh.write(struct.pack("<III", *fm.shape))
            fh.write(fm.tobytes())
            kps = e.sift.keypoints
            fh.write(struct.pack("<I", len(kps)))
            if kps:
                rec = np.array(
                    [(k.x, k.y, k.sigma, k.orientation) for k in kps], dtype="<f4"
                )
                fh.write(rec.tobytes())
                fh.write(quantize_descriptors(e.sift.descriptors).tobytes())
            manifest["entries"].append({
                "id": e.image_id,
                "path": e.path,
                "feature_map_shape": list(fm.shape),
                "keypoints": len(kps),
            })
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dictionary(path, expected_model_id: str | None = None) -> FeatureDictionary:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DictionaryFormatError(f"cannot open dictionary {path}: {exc}") from exc
    with fh:
        if _read_exact(fh, 4) != MAGIC:
            raise DictionaryFormatError(f"{path} is not a feature dictionary (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != FORMAT_VERSION:
            raise DictionaryFormatError(f"unsupported dictionary version {version}")
        model_id = _unpack_str(fh)
        sift_hash = _unpack_str(fh)
        (n_entries,) = struct.unpack("<I", _read_exact(fh, 4))
        entries = []
        for _ in range(n_entries):
            image_id = _unpack_str(fh)
            entry_path = _unpack_str(fh)
            (c,) = struct.unpack("<I", _read_exact(fh, 4))
            pooled = np.frombuffer(_read_exact(fh, 4 * c), dtype="<f4").copy()
            shape = struct.unpack("<III", _read_exact(fh, 12))
            count = shape[0] * shape[1] * shape[2]
            fm = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape).copy()
            (n_kp,) = struct.unpack("<I", _read_exact(fh, 4))
            if n_kp:
                rec = np.frombuffer(_read_exact(fh, 16 * n_kp), dtype="<f4").reshape(n_kp, 4)
                kps = [
                    Keypoint(x=float(r[0]), y=float(r[1]),
                             sigma=float(r[2]), orientation=float(r[3]))
                    for r in rec
                ]
                q = np.frombuffer(_read_exact(fh, 128 * n_kp), dtype=np.uint8)
                desc = dequantize_descriptors(q.reshape(n_kp, 128))
            else:
                kps = []
                desc = np.zeros((0, 128))
            entries.append(DictEntry(
                image_id=image_id, path=entry_path, pooled=pooled,
                feature_map=fm, sift=SiftFeatureSet(keypoints=kps, descriptors=desc),
            ))
    d = FeatureDictionary(model_id=model_id, sift_hash=sift_hash, entries=entries)
    if expected_model_id is not None and expected_model_id != model_id:
        raise BackboneMismatch(
            f"dictionary built with {model_id!r}, expected {expected_model_id!r}"
        )
    return d


# --- similarity -------------------------------------------------------------

def ratio_test(d1: float, d2: float, alpha: float) -> bool:
    """Keep a match only when clearly better than the runner-up: d1 < alpha*d2."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if d2 == 0.0:
        return False
    return d1 < alpha * d2


def fsp(test: SiftFeatureSet, train: SiftFeatureSet, alpha: float = 0.7,
        index: DescriptorIndex | None = None) -> float:
    """Fraction of test keypoints whose best train match passes the ratio test.

    Descriptor-starved inputs (no test descriptors, or fewer than two train
    descriptors) score 0 with a warning instead of raising.
    """
    n_total = len(test.descriptors)
    if n_total == 0 or len(train.descriptors) < 2:
        warnings.warn("too few descriptors for keypoint matching; similarity is 0",
                      stacklevel=2)
        return 0.0
    if index is None:
        index = DescriptorIndex(train.descriptors)
    n_good = 0
    for q in test.descriptors:
        d1, d2, _ = index.knn2(q)
        if ratio_test(d1, d2, alpha):
            n_good += 1
    return n_good / n_total


def cosine_similarity(v1, v2) -> float:
    from .errors import DimMismatch

    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise DimMismatch(f"vector shapes differ: {v1.shape} vs {v2.shape}")
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 < 1e-12 or n2 < 1e-12:
        return 0.0
    return float(np.dot(v1, v2) / (n1 * n2))


@dataclass
class SelectionResult:
    selected_ids: list
    scores: dict              # image_id -> similarity, every candidate
    selector: str
    sp: float
    fallback_used: bool

    @property
    def data_saved_percent(self) -> float:
        """Share of the dictionary excluded from online fitting."""
        if not self.scores:
            return 0.0
        return 100.0 * (1.0 - len(self.selected_ids) / len(self.scores))


def select_subset(d: FeatureDictionary, test_pooled, test_sift: SiftFeatureSet | None,
                  selector: str = "cosine", sp: float | None = None,
                  alpha: float = 0.7, fallback_k: int = 5,
                  checks: int = 32) -> SelectionResult:
    """Pick the training entries most similar to the test image.

    Entries scoring at least ``sp`` are selected; when none qualify the best
    ``fallback_k`` are taken instead so the caller always gets a non-empty,
    if less trustworthy, subset.
    """
    if selector not in DEFAULT_SP:
        raise ValueError(f"unknown selector {selector!r}")
    if not d.entries:
        raise EmptyTrainingSet("cannot select from an empty dictionary")
    if sp is None:
        sp = DEFAULT_SP[selector]
    if not 0.0 < sp < 1.0:
        raise ValueError(f"sp must be in (0, 1), got {sp}")

    scores = {}
    for e in d.entries:
        if selector == "cosine":
            # negative cosine means "opposite", which for selection is
            # simply "not similar"; clamp into [0, 1]
            s = max(0.0, cosine_similarity(test_pooled, e.pooled))
        else:
            if test_sift is None:
                raise ValueError("sift-flann selection needs the test image's keypoints")
            if len(e.sift.descriptors) < 2:
                warnings.warn(
                    f"dictionary entry {e.image_id!r} has too few descriptors; scored 0",
                    stacklevel=2,
                )
                s = 0.0
            else:
                s = fsp(test_sift, e.sift, alpha,
                        index=e.descriptor_index(mode="approximate", checks=checks))
        scores[e.image_id] = s

    order = sorted(d.entries, key=lambda e: (-scores[e.image_id], e.image_id))
    selected = [e.image_id for e in order if scores[e.image_id] >= sp]
    fallback_used = False
    if not selected:
        fallback_used = True
        selected = [e.image_id for e in order[:fallback_k]]
        warnings.warn(
            f"no entry reached sp={sp}; falling back to the best {len(selected)}",
            stacklevel=2,
        )
    return SelectionResult(
        selected_ids=selected, scores=scores, selector=selector,
        sp=sp, fallback_used=fallback_used,
    )
