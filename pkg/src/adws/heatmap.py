"""Score-map visualization: color overlay plus over-threshold cell outlines."""

import numpy as np

from .ingest import Image, bilinear_resize, encode_png
from .normality import ScoreMap

# five anchor colors, interpolated into a 256-entry lookup table
_RAMP_STOPS = np.array([
    [13, 8, 135],
    [126, 3, 168],
    [204, 71, 120],
    [248, 149, 64],
    [240, 249, 33],
], dtype=np.float64)


def _build_lut() -> np.ndarray:
    positions = np.linspace(0.0, 1.0, len(_RAMP_STOPS))
    xs = np.linspace(0.0, 1.0, 256)
    lut = np.stack(
        [np.interp(xs, positions, _RAMP_STOPS[:, c]) for c in range(3)], axis=1
    )
    return np.round(lut).astype(np.uint8)


_LUT = _build_lut()


def _cell_edges(total: int, cells: int) -> np.ndarray:
    sizes = [len(c) for c in np.array_split(np.arange(total), cells)]
    return np.concatenate([[0], np.cumsum(sizes)])


def render_heatmap(sm: ScoreMap, img: Image, tau: float) -> bytes:
    """PNG bytes of the image with the score map blended over it.

    The map is min-max normalized, bilinearly upsampled, pushed through the
    color ramp, and alpha-blended at 0.5.  Grid cells whose raw score
    exceeds tau get a white outline.
    """
    grid = np.asarray(sm.grid, dtype=np.float64)
    lo = grid.min()
    hi = grid.max()
    norm = (grid - lo) / (hi - lo) if hi > lo else np.zeros_like(grid)

    h, w = img.height, img.width
    up = bilinear_resize(norm, h, w)
    idx = np.clip(np.round(up * 255.0), 0, 255).astype(np.intp)
    colors = _LUT[idx]

    blended = np.round(0.5 * img.data.astype(np.float64) + 0.5 * colors)
    blended = blended.astype(np.uint8)

    gh, gw = grid.shape
    rows = _cell_edges(h, gh)
    cols = _cell_edges(w, gw)
    for i in range(gh):
        for j in range(gw):
            if grid[i, j] > tau:
                r0, r1 = rows[i], rows[i + 1]
                c0, c1 = cols[j], cols[j + 1]
                blended[r0 : r0 + 2, c0:c1] = 255
                blended[max(r1 - 2, 0) : r1, c0:c1] = 255
                blended[r0:r1, c0 : c0 + 2] = 255
                blended[r0:r1, max(c1 - 2, 0) : c1] = 255

    return encode_png(Image(blended))
