"""KD-tree over 128-d descriptors with exact and approximate 2-NN queries.

The approximate mode follows the best-bin-first idea: traverse leaves in
order of a lower bound on their distance and stop after a fixed number of
leaf visits (``checks``). Exact mode keeps traversing until the bound
exceeds the current second-best distance, which guarantees true nearest
neighbors.
"""

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import TooFewDescriptors

DEFAULT_LEAF_SIZE = 16


@dataclass
class _Node:
    axis: int = -1
    split: float = 0.0
    left: int = -1
    right: int = -1
    start: int = 0  # leaf payload: slice into the permuted point array
    end: int = 0

    @property
    def is_leaf(self) -> bool:
        return self.axis < 0


class DescriptorIndex:
    """Spatial index over one image's descriptors.

    mode "exact" returns true nearest neighbors; "approximate" bounds the
    number of leaf visits per query by ``checks``.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE,
                 mode: str = "exact", checks: int = 32):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2:
            raise ValueError("points must be a (N, dim) array")
        if mode not in ("exact", "approximate"):
            raise ValueError(f"unknown mode: {mode!r}")
        self.points = points
        self.mode = mode
        self.checks = max(1, int(checks))
        self.leaf_size = max(1, int(leaf_size))
        self._perm = np.arange(len(points))
        self._nodes = []
        if len(points):
            self._build(0, len(points))

    def __len__(self) -> int:
        return len(self.points)

    def _build(self, start: int, end: int) -> int:
        node_id = len(self._nodes)
        self._nodes.append(_Node())
        if end - start <= self.leaf_size:
            self._nodes[node_id] = _Node(start=start, end=end)
            return node_id
        block = self.points[self._perm[start:end]]
        spreads = block.max(axis=0) - block.min(axis=0)
        axis = int(np.argmax(spreads))
        if spreads[axis] <= 0.0:
            # all points identical: keep as one leaf
            self._nodes[node_id] = _Node(start=start, end=end)
            return node_id
        order = np.argsort(block[:, axis], kind="stable")
        self._perm[start:end] = self._perm[start:end][order]
        mid = (start + end) // 2
        split = float(self.points[self._perm[mid], axis])
        node = _Node(axis=axis, split=split)
        self._nodes[node_id] = node
        node.left = self._build(start, mid)
        node.right = self._build(mid, end)
        return node_id

    def knn2(self, query: np.ndarray):
        """Two nearest neighbors of ``query``.

        Returns (d1, d2, i1): the two smallest Euclidean distances and the
        index of the nearest descriptor.
        """
        if len(self.points) < 2:
            raise TooFewDescriptors(f"index holds {len(self.points)} descriptors, need >= 2")
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.points.shape[1],):
            raise ValueError(f"query dim {query.shape} != index dim {self.points.shape[1]}")

        best = [(np.inf, -1), (np.inf, -1)]  # (squared distance, index), ascending
        exact = self.mode == "exact"
        budget = np.inf if exact else self.checks
        leaves_visited = 0

        # heap entries: (lower-bound squared distance, tiebreak, node id)
        heap = [(0.0, 0, 0)]
        counter = 1
        while heap:
            bound, _, node_id = heapq.heappop(heap)
            if bound > best[1][0]:
                break  # every remaining node is at least this far
            node = self._nodes[node_id]
            if node.is_leaf:
                idx = self._perm[node.start : node.end]
                diffs = self.points[idx] - query
                d2s = np.einsum("ij,ij->i", diffs, diffs)
                for dist_sq, point_idx in zip(d2s, idx):
                    entry = (float(dist_sq), int(point_idx))
                    if entry < best[1]:
                        if entry < best[0]:
                            best[1] = best[0]
                            best[0] = entry
                        else:
                            best[1] = entry
                leaves_visited += 1
                if leaves_visited >= budget:
                    break
                continue
            delta = query[node.axis] - node.split
            near, far = (node.left, node.right) if delta < 0 else (node.right, node.left)
            far_bound = max(bound, delta * delta)
            heapq.heappush(heap, (bound, counter, near))
            counter += 1
            heapq.heappush(heap, (far_bound, counter, far))
            counter += 1

        d1 = float(np.sqrt(best[0][0]))
        d2 = float(np.sqrt(best[1][0]))
        return d1, d2, best[0][1]


def brute_force_knn2(points: np.ndarray, query: np.ndarray):
    """Reference 2-NN by full scan; oracle for the exact index mode."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        raise TooFewDescriptors(f"need >= 2 descriptors, got {len(points)}")
    diffs = points - np.asarray(query, dtype=np.float64)
    d2s = np.einsum("ij,ij->i", diffs, diffs)
    order = np.lexsort((np.arange(len(points)), d2s))
    i1, i2 = order[0], order[1]
    return float(np.sqrt(d2s[i1])), float(np.sqrt(d2s[i2])), int(i1)
