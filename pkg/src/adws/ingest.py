"""Image decoding, preprocessing, and dataset directory scanning."""

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PilImage
from PIL import UnidentifiedImageError

from .errors import EmptyTrainingSet, MalformedImage, MissingDirectory, UnsupportedFormat

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}

# ITU-R 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, row-major (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.dtype != np.uint8:
            raise ValueError(f"expected (H, W, 3) uint8 array, got {d.shape} {d.dtype}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image must be at least 1x1")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3


@dataclass(frozen=True)
class TrainEntry:
    image_id: str
    path: Path


@dataclass(frozen=True)
class TestEntry:
    image_id: str
    path: Path
    label: str  # "normal" | "anomalous"
    defect_name: str = ""


@dataclass
class DatasetIndex:
    root: Path
    train_images: list = field(default_factory=list)
    test_images: list = field(default_factory=list)


def decode_image(data: bytes) -> Image:
    """Decode PNG or JPEG bytes into an RGB ``Image``.

    Grayscale sources are replicated to three channels, alpha is dropped,
    and 16-bit samples are rescaled to 8-bit.
    """
    try:
        pil = PilImage.open(io.BytesIO(data))
        fmt = pil.format
        if fmt not in ("PNG", "JPEG"):
            raise UnsupportedFormat(f"unsupported image format: {fmt}")
        pil.load()
    except UnsupportedFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise MalformedImage(f"undecodable image bytes: {exc}") from exc

    if pil.mode in ("I", "I;16", "I;16B", "I;16L"):
        arr = np.asarray(pil, dtype=np.uint32)
        arr = (arr >> 8).astype(np.uint8) if arr.max() > 255 else arr.astype(np.uint8)
        rgb = np.repeat(arr[:, :, None], 3, axis=2)
        return Image(rgb)

    if pil.mode != "RGB":
        # covers L, LA, P, RGBA, CMYK; alpha is discarded
        pil = pil.convert("RGB")
    return Image(np.asarray(pil, dtype=np.uint8))


def encode_png(img: Image) -> bytes:
    """Encode an ``Image`` as PNG bytes (deterministic for fixed input)."""
    buf = io.BytesIO()
    PilImage.fromarray(img.data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear point-sampling resize of a (H, W) or (H, W, C) float array.

    Output pixel centers map to input coordinates with the half-pixel
    convention: src = (dst + 0.5) * scale - 0.5.
    """
    in_h, in_w = arr.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)

    if arr.ndim == 2:
        a = arr[np.ix_(y0, x0)]
        b = arr[np.ix_(y0, x1)]
        c = arr[np.ix_(y1, x0)]
        d = arr[np.ix_(y1, x1)]
        wyc = wy[:, None]
        wxc = wx[None, :]
    else:
        a = arr[np.ix_(y0, x0)]
        b = arr[np.ix_(y0, x1)]
        c = arr[np.ix_(y1, x0)]
        d = arr[np.ix_(y1, x1)]
        wyc = wy[:, None, None]
        wxc = wx[None, :, None]

    top = a * (1.0 - wxc) + b * wxc
    bot = c * (1.0 - wxc) + d * wxc
    return top * (1.0 - wyc) + bot * wyc


def resize_normalize(img: Image, mean, std, size: int = 380) -> np.ndarray:
    """Resize to ``size`` x ``size`` and normalize to a (3, size, size) float32 tensor.

    Applies per-channel (x/255 - mean) / std with the constants recorded in
    the backbone's metadata.
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(3)
    std = np.asarray(std, dtype=np.float64).reshape(3)
    scaled = img.data.astype(np.float64) / 255.0
    resized = bilinear_resize(scaled, size, size)
    normalized = (resized - mean[None, None, :]) / std[None, None, :]
    return np.ascontiguousarray(normalized.transpose(2, 0, 1)).astype(np.float32)


def to_grayscale(img: Image) -> np.ndarray:
    """Luma-weighted grayscale in [0, 1] as a (H, W) float64 array."""
    return (img.data.astype(np.float64) @ LUMA_WEIGHTS) / 255.0


def _image_files(directory: Path) -> list:
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def _entry_id(root: Path, path: Path) -> str:
    return path.relative_to(root).with_suffix("").as_posix()


def scan_dataset(root, layout: str = "mvtec") -> DatasetIndex:
    """Scan a dataset directory into a ``DatasetIndex``.

    mvtec layout: train images under root/train/good/, test images under
    root/test/<label>/ where label "good" means normal and anything else is
    anomalous with that defect name.

    flat layout: root/train/ holds all normal training images, root/test_normal/
    and root/test_anomalous/ hold the test split.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"dataset root does not exist: {root}")
    if layout not in ("mvtec", "flat"):
        raise ValueError(f"unknown layout: {layout!r}")

    index = DatasetIndex(root=root)

    if layout == "mvtec":
        train_dir = root / "train" / "good"
        if not train_dir.is_dir():
            raise MissingDirectory(f"missing training directory: {train_dir}")
        for p in _image_files(train_dir):
            index.train_images.append(TrainEntry(_entry_id(root, p), p))

        test_dir = root / "test"
        if test_dir.is_dir():
            for sub in sorted(d for d in test_dir.iterdir() if d.is_dir()):
                label = "normal" if sub.name == "good" else "anomalous"
                defect = "" if sub.name == "good" else sub.name
                for p in _image_files(sub):
                    index.test_images.append(TestEntry(_entry_id(root, p), p, label, defect))
    else:
        train_dir = root / "train"
        if not train_dir.is_dir():
            raise MissingDirectory(f"missing training directory: {train_dir}")
        for p in _image_files(train_dir):
            index.train_images.append(TrainEntry(_entry_id(root, p), p))
        for sub_name, label in (("test_normal", "normal"), ("test_anomalous", "anomalous")):
            sub = root / sub_name
            if sub.is_dir():
                defect = "" if label == "normal" else "anomalous"
                for p in _image_files(sub):
                    index.test_images.append(TestEntry(_entry_id(root, p), p, label, defect))

    if not index.train_images:
        raise EmptyTrainingSet(f"no training images under {train_dir}")
    return index


def load_image(path) -> Image:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedImage(f"cannot read {path}: {exc}") from exc
    try:
        return decode_image(data)
    except (MalformedImage, UnsupportedFormat) as exc:
        raise type(exc)(f"{path}: {exc}") from exc
