"""From-scratch SIFT keypoint detection and description.

Scale-space construction, difference-of-Gaussians extrema detection with
subpixel refinement, orientation assignment, and 128-d gradient-histogram
descriptors. Numeric defaults follow the classic parameterization
(sigma0 1.6, 3 scales per octave, contrast 0.03, edge ratio 10, clip 0.2).
"""

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall

# assumed blur of the input image before the first pyramid level
ASSUMED_INPUT_BLUR = 0.5

# minimum image side kept in the pyramid
MIN_OCTAVE_SIZE = 16

# discard DoG extrema closer than this to an image border (pixels)
DETECT_BORDER = 5

ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8

DESCR_WIDTH = 4
DESCR_ORI_BINS = 8
DESCR_SCALE_FACTOR = 3.0

# descriptor window must fit: drop keypoints within this many sigmas of a border
BORDER_SIGMAS = 8.0


@dataclass(frozen=True)
class SiftConfig:
    octaves: int | None = None  # None: derived from image size
    scales_per_octave: int = 3
    sigma0: float = 1.6
    contrast_threshold: float = 0.03
    edge_ratio: float = 10.0
    descriptor_clip: float = 0.2
    max_keypoints: int = 2000

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if self.contrast_threshold <= 0 or self.edge_ratio <= 0 or self.descriptor_clip <= 0:
            raise ValueError("thresholds must be positive")


def sift_config_hash(cfg: SiftConfig) -> str:
    payload = json.dumps(
        {
            "octaves": cfg.octaves,
            "scales_per_octave": cfg.scales_per_octave,
            "sigma0": cfg.sigma0,
            "contrast_threshold": cfg.contrast_threshold,
            "edge_ratio": cfg.edge_ratio,
            "descriptor_clip": cfg.descriptor_clip,
            "max_keypoints": cfg.max_keypoints,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass
class Keypoint:
    x: float
    y: float
    sigma: float
    orientation: float = 0.0
    octave: int = 0
    scale_index: int = 0
    response: float = 0.0


@dataclass
class SiftFeatureSet:
    keypoints: list
    descriptors: np.ndarray  # (K, 128) float64, unit norm rows

    def __len__(self) -> int:
        return len(self.keypoints)


@dataclass
class ScaleSpace:
    gaussians: list  # per octave: list of (H, W) float64 images
    dogs: list       # per octave: list of adjacent differences
    sigma0: float
    scales_per_octave: int

    @property
    def octaves(self) -> int:
        return len(self.gaussians)

    def level_sigma(self, octave: int, level: float) -> float:
        """Absolute sigma (original-image pixels) of a pyramid level."""
        return self.sigma0 * (2.0 ** octave) * (2.0 ** (level / self.scales_per_octave))


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled, normalized 1-d Gaussian kernel with radius ceil(4 sigma)."""
    radius = max(1, int(math.ceil(4.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img.copy()
    k = gaussian_kernel1d(sigma)
    out = ndimage.convolve1d(img, k, axis=0, mode="reflect")
    return ndimage.convolve1d(out, k, axis=1, mode="reflect")


def derive_octave_count(height: int, width: int) -> int:
    """Octaves obtained by halving until the short side drops below 16."""
    short = min(height, width)
    if short < MIN_OCTAVE_SIZE:
        return 0
    return int(math.floor(math.log2(short / MIN_OCTAVE_SIZE))) + 1


def build_scale_space(gray: np.ndarray, cfg: SiftConfig | None = None) -> ScaleSpace:
    """Gaussian pyramid with incremental blurs plus its DoG pyramid."""
    cfg = cfg or SiftConfig()
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("expected a single-channel image")
    h, w = gray.shape
    max_octaves = derive_octave_count(h, w)
    if max_octaves < 1:
        raise ImageTooSmall(f"minimum dimension {min(h, w)} < {MIN_OCTAVE_SIZE}")
    octaves = max_octaves if cfg.octaves is None else min(cfg.octaves, max_octaves)

    s = cfg.scales_per_octave
    # incremental blur increments between consecutive levels
    increments = []
    for i in range(1, s + 3):
        prev = cfg.sigma0 * 2.0 ** ((i - 1) / s)
        cur = cfg.sigma0 * 2.0 ** (i / s)
        increments.append(math.sqrt(cur * cur - prev * prev))

    base_inc = math.sqrt(max(cfg.sigma0 ** 2 - ASSUMED_INPUT_BLUR ** 2, 0.01))
    level0 = gaussian_blur(gray, base_inc)

    gaussians = []
    dogs = []
    for _ in range(octaves):
        levels = [level0]
        for inc in increments:
            levels.append(gaussian_blur(levels[-1], inc))
        gaussians.append(levels)
        dogs.append([levels[i + 1] - levels[i] for i in range(len(levels) - 1)])
        # level s has twice the octave's base sigma: subsampling restores sigma0
        level0 = levels[s][::2, ::2]
    return ScaleSpace(gaussians, dogs, cfg.sigma0, s)


def _refine_extremum(dog: np.ndarray, level: int, i: int, j: int, s: int):
    """Newton refinement of a DoG extremum; returns (level, i, j, offset, value) or None."""
    n_levels, h, w = dog.shape
    for _ in range(5):
        cube = dog[level - 1 : level + 2, i - 1 : i + 2, j - 1 : j + 2]
        center = cube[1, 1, 1]
        grad = 0.5 * np.array(
            [
                cube[2, 1, 1] - cube[0, 1, 1],
                cube[1, 2, 1] - cube[1, 0, 1],
                cube[1, 1, 2] - cube[1, 1, 0],
            ]
        )
        dll = cube[2, 1, 1] - 2 * center + cube[0, 1, 1]
        dyy = cube[1, 2, 1] - 2 * center + cube[1, 0, 1]
        dxx = cube[1, 1, 2] - 2 * center + cube[1, 1, 0]
        dly = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        dlx = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dyx = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        hess = np.array([[dll, dly, dlx], [dly, dyy, dyx], [dlx, dyx, dxx]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) < 0.5):
            value = center + 0.5 * float(grad @ offset)
            return level, i, j, offset, value
        level += int(round(offset[0]))
        i += int(round(offset[1]))
        j += int(round(offset[2]))
        if (
            level < 1
            or level > s
            or i < DETECT_BORDER
            or i >= h - DETECT_BORDER
            or j < DETECT_BORDER
            or j >= w - DETECT_BORDER
        ):
            return None
    return None


def _passes_edge_test(dog_level: np.ndarray, i: int, j: int, edge_ratio: float) -> bool:
    center = dog_level[i, j]
    dxx = dog_level[i, j + 1] - 2 * center + dog_level[i, j - 1]
    dyy = dog_level[i + 1, j] - 2 * center + dog_level[i - 1, j]
    dxy = 0.25 * (
        dog_level[i + 1, j + 1]
        - dog_level[i + 1, j - 1]
        - dog_level[i - 1, j + 1]
        + dog_level[i - 1, j - 1]
    )
    det = dxx * dyy - dxy * dxy
    if det <= 0:
        return False
    trace = dxx + dyy
    return edge_ratio * trace * trace <= (edge_ratio + 1.0) ** 2 * det


def _keypoint_sort_key(kp: Keypoint):
    return (-abs(kp.response), kp.y, kp.x, kp.sigma, kp.orientation)


def detect_keypoints(ss: ScaleSpace, cfg: SiftConfig | None = None) -> list:
    """3x3x3 DoG extrema with subpixel refinement, contrast/edge rejection."""
    cfg = cfg or SiftConfig()
    s = ss.scales_per_octave
    prelim = 0.5 * cfg.contrast_threshold / s
    orig_h, orig_w = ss.gaussians[0][0].shape

    keypoints = []
    seen = set()
    for octave, dog_levels in enumerate(ss.dogs):
        dog = np.stack(dog_levels)
        n_levels, h, w = dog.shape
        if h <= 2 * DETECT_BORDER or w <= 2 * DETECT_BORDER:
            continue
        is_max = dog == ndimage.maximum_filter(dog, size=3, mode="constant", cval=np.inf * -1)
        is_min = dog == ndimage.minimum_filter(dog, size=3, mode="constant", cval=np.inf)
        candidate = (is_max | is_min) & (np.abs(dog) > prelim)
        candidate[0, :, :] = False
        candidate[s + 1 :, :, :] = False
        candidate[:, :DETECT_BORDER, :] = False
        candidate[:, h - DETECT_BORDER :, :] = False
        candidate[:, :, :DETECT_BORDER] = False
        candidate[:, :, w - DETECT_BORDER :] = False

        scale = 2.0 ** octave
        for level, i, j in np.argwhere(candidate):
            refined = _refine_extremum(dog, int(level), int(i), int(j), s)
            if refined is None:
                continue
            lvl, ri, rj, offset, value = refined
            if abs(value) < cfg.contrast_threshold:
                continue
            if not _passes_edge_test(dog[lvl], ri, rj, cfg.edge_ratio):
                continue
            key = (octave, lvl, ri, rj)
            if key in seen:
                continue
            seen.add(key)
            x = (rj + offset[2]) * scale
            y = (ri + offset[1]) * scale
            sigma = ss.level_sigma(octave, lvl + offset[0])
            border = BORDER_SIGMAS * sigma
            if not (border <= x <= orig_w - 1 - border and border <= y <= orig_h - 1 - border):
                continue
            keypoints.append(
                Keypoint(
                    x=float(x),
                    y=float(y),
                    sigma=float(sigma),
                    octave=octave,
                    scale_index=lvl,
                    response=float(value),
                )
            )

    keypoints.sort(key=_keypoint_sort_key)
    return keypoints[: cfg.max_keypoints]


def _gradient_window(img: np.ndarray, cy: int, cx: int, radius: int):
    """Gradient magnitude/orientation over a clipped square window.

    Returns (di, dj, mag, ori) flat arrays; di/dj are offsets from the center.
    """
    h, w = img.shape
    y0, y1 = max(cy - radius, 1), min(cy + radius, h - 2)
    x0, x1 = max(cx - radius, 1), min(cx + radius, w - 2)
    if y1 < y0 or x1 < x0:
        empty = np.empty(0)
        return empty, empty, empty, empty
    block = img[y0 - 1 : y1 + 2, x0 - 1 : x1 + 2]
    dx = 0.5 * (block[1:-1, 2:] - block[1:-1, :-2])
    dy = 0.5 * (block[:-2, 1:-1] - block[2:, 1:-1])  # up is positive
    mag = np.hypot(dx, dy)
    ori = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
    dig, djg = np.meshgrid(
        np.arange(y0, y1 + 1) - cy, np.arange(x0, x1 + 1) - cx, indexing="ij"
    )
    return dig.ravel(), djg.ravel(), mag.ravel(), ori.ravel()


def _orientation_angles(img: np.ndarray, px: float, py: float, sigma_rel: float) -> list:
    """Dominant gradient orientations (radians) near one keypoint."""
    sig = ORI_SIGMA_FACTOR * sigma_rel
    radius = max(1, int(round(ORI_RADIUS_FACTOR * sig)))
    di, dj, mag, ori = _gradient_window(img, int(round(py)), int(round(px)), radius)
    if mag.size == 0:
        return [0.0]
    weights = np.exp(-(di * di + dj * dj) / (2.0 * sig * sig)) * mag
    bins = np.round(ori * (ORI_BINS / (2.0 * math.pi))).astype(int) % ORI_BINS
    hist = np.bincount(bins, weights=weights, minlength=ORI_BINS)

    # circular 1-4-6-4-1 smoothing
    smooth = (
        6 * hist
        + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
        + np.roll(hist, 2)
        + np.roll(hist, -2)
    ) / 16.0

    peak_max = smooth.max()
    if peak_max <= 0:
        return [0.0]
    left = np.roll(smooth, 1)
    right = np.roll(smooth, -1)
    peaks = np.nonzero((smooth > left) & (smooth > right) & (smooth >= ORI_PEAK_RATIO * peak_max))[0]
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(smooth))])
    angles = []
    for p in peaks:
        l, c, r = left[p], smooth[p], right[p]
        denom = l - 2.0 * c + r
        shift = 0.0 if denom == 0 else 0.5 * (l - r) / denom
        angles.append(((p + shift) % ORI_BINS) * (2.0 * math.pi / ORI_BINS))
    return angles


def _descriptor(img: np.ndarray, px: float, py: float, sigma_rel: float, theta: float, clip: float) -> np.ndarray:
    d = DESCR_WIDTH
    nb = DESCR_ORI_BINS
    bin_width = DESCR_SCALE_FACTOR * sigma_rel
    radius = int(round(bin_width * math.sqrt(2) * (d + 1) * 0.5))
    h, w = img.shape
    radius = min(radius, int(math.hypot(h, w)))
    di, dj, mag, ori = _gradient_window(img, int(round(py)), int(round(px)), radius)
    hist = np.zeros((d + 2, d + 2, nb))
    if mag.size:
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        u = dj.astype(np.float64)
        v = -di.astype(np.float64)  # up-positive to match gradient convention
        u_rot = (u * cos_t + v * sin_t) / bin_width
        v_rot = (-u * sin_t + v * cos_t) / bin_width
        col_bin = u_rot + 0.5 * d - 0.5
        row_bin = -v_rot + 0.5 * d - 0.5
        inside = (row_bin > -1) & (row_bin < d) & (col_bin > -1) & (col_bin < d)
        if np.any(inside):
            row_bin = row_bin[inside]
            col_bin = col_bin[inside]
            weight = np.exp(-2.0 * (u_rot[inside] ** 2 + v_rot[inside] ** 2) / (d * d))
            values = weight * mag[inside]
            obin = np.mod(ori[inside] - theta, 2.0 * math.pi) * (nb / (2.0 * math.pi))

            r0 = np.floor(row_bin).astype(int)
            c0 = np.floor(col_bin).astype(int)
            o0 = np.floor(obin).astype(int)
            rf = row_bin - r0
            cf = col_bin - c0
            of = obin - o0
            o0 %= nb
            for dr in (0, 1):
                wr = values * (rf if dr else 1.0 - rf)
                for dc in (0, 1):
                    wc = wr * (cf if dc else 1.0 - cf)
                    for do in (0, 1):
                        wo = wc * (of if do else 1.0 - of)
                        np.add.at(hist, (r0 + 1 + dr, c0 + 1 + dc, (o0 + do) % nb), wo)

    vec = hist[1:-1, 1:-1, :].ravel()
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = np.minimum(vec / norm, clip)
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec = vec / norm
    return vec


def describe_keypoints(ss: ScaleSpace, keypoints: list, cfg: SiftConfig | None = None) -> SiftFeatureSet:
    """Assign dominant orientations and build 128-d descriptors.

    Orientation peaks within 80% of the histogram maximum spawn duplicate
    keypoints; the combined set is re-capped at max_keypoints.
    """
    cfg = cfg or SiftConfig()
    s = ss.scales_per_octave
    oriented = []
    for kp in keypoints:
        scale = 2.0 ** kp.octave
        sigma_rel = kp.sigma / scale
        level_float = s * math.log2(max(sigma_rel / ss.sigma0, 1e-12))
        gauss_idx = int(np.clip(round(level_float), 0, s + 2))
        img = ss.gaussians[kp.octave][gauss_idx]
        px, py = kp.x / scale, kp.y / scale
        for theta in _orientation_angles(img, px, py, sigma_rel):
            oriented.append((replace(kp, orientation=float(theta)), img, px, py, sigma_rel))

    oriented.sort(key=lambda item: _keypoint_sort_key(item[0]))
    oriented = oriented[: cfg.max_keypoints]

    out_kps = []
    descs = np.zeros((len(oriented), DESCR_WIDTH * DESCR_WIDTH * DESCR_ORI_BINS))
    for idx, (kp, img, px, py, sigma_rel) in enumerate(oriented):
        descs[idx] = _descriptor(img, px, py, sigma_rel, kp.orientation, cfg.descriptor_clip)
        out_kps.append(kp)
    return SiftFeatureSet(out_kps, descs)


def sift_features(gray: np.ndarray, cfg: SiftConfig | None = None) -> SiftFeatureSet:
    """Full SIFT pipeline: scale space, keypoints, descriptors."""
    cfg = cfg or SiftConfig()
    ss = build_scale_space(gray, cfg)
    kps = detect_keypoints(ss, cfg)
    return describe_keypoints(ss, kps, cfg)
