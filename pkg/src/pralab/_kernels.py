"""Hot inner loops, each with a numba kernel and a pure numpy/scipy path.

Set ``PRALAB_NUMBA=0`` to force the numpy path (also used automatically
when numba is not importable).  Both paths are exported with ``_numba`` /
``_numpy`` suffixes so tests and the benchmark can compare them directly.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("PRALAB_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- clustering

def cluster_labels_numpy(xyz: np.ndarray, tolerance: float) -> np.ndarray:
    """Connected-component label per point; a label is the smallest index in its component."""
    n = len(xyz)
    if n == 0:
        return np.zeros(0, np.int64)
    pairs = cKDTree(xyz).query_pairs(tolerance, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    first = np.full(comp.max() + 1, n, np.int64)
    np.minimum.at(first, comp, np.arange(n))
    return first[comp]


if HAVE_NUMBA:

    @njit(cache=True)
    def _find(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @njit(cache=True)
    def _cluster_labels_kernel(xyz, tolerance):
        n = xyz.shape[0]
        parent = np.arange(n)
        if n == 0:
            return parent
        off = 1 << 19
        m = 1 << 20
        keys = np.empty(n, np.int64)
        cells = np.empty((n, 3), np.int64)
        for i in range(n):
            for k in range(3):
                cells[i, k] = np.int64(np.floor(xyz[i, k] / tolerance)) + off
            keys[i] = (cells[i, 0] * m + cells[i, 1]) * m + cells[i, 2]
        order = np.argsort(keys)
        sorted_keys = keys[order]
        tol2 = tolerance * tolerance
        for i in range(n):
            for dx in range(-1, 2):
                for dy in range(-1, 2):
                    # the three z-neighbour cells have consecutive keys
                    key = ((cells[i, 0] + dx) * m + cells[i, 1] + dy) * m + cells[i, 2]
                    lo = np.searchsorted(sorted_keys, key - 1)
                    hi = np.searchsorted(sorted_keys, key + 1, side="right")
                    for p in range(lo, hi):
                        j = order[p]
                        if j <= i:
                            continue
                        d0 = xyz[i, 0] - xyz[j, 0]
                        d1 = xyz[i, 1] - xyz[j, 1]
                        d2 = xyz[i, 2] - xyz[j, 2]
                        if d0 * d0 + d1 * d1 + d2 * d2 <= tol2:
                            ri = _find(parent, i)
                            rj = _find(parent, j)
                            if ri < rj:
                                parent[rj] = ri
                            elif rj < ri:
                                parent[ri] = rj
        labels = np.empty(n, np.int64)
        for i in range(n):
            labels[i] = _find(parent, i)
        return labels

    def cluster_labels_numba(xyz: np.ndarray, tolerance: float) -> np.ndarray:
        return _cluster_labels_kernel(np.ascontiguousarray(xyz, dtype=np.float64), float(tolerance))

else:  # pragma: no cover
    cluster_labels_numba = cluster_labels_numpy


# ------------------------------------------------------------- azimuth gaps

def gap_indices_numpy(sorted_az: np.ndarray, threshold: float) -> np.ndarray:
    """Indices ``i`` with ``sorted_az[i+1] - sorted_az[i] > threshold``."""
    return np.flatnonzero(np.diff(sorted_az) > threshold)


if HAVE_NUMBA:

    @njit(cache=True)
    def _gap_indices_kernel(sorted_az, threshold):
        out = np.empty(max(sorted_az.shape[0] - 1, 0), np.int64)
        k = 0
        for i in range(sorted_az.shape[0] - 1):
            if sorted_az[i + 1] - sorted_az[i] > threshold:
                out[k] = i
                k += 1
        return out[:k]

    def gap_indices_numba(sorted_az: np.ndarray, threshold: float) -> np.ndarray:
        return _gap_indices_kernel(np.ascontiguousarray(sorted_az, dtype=np.float64), float(threshold))

else:  # pragma: no cover
    gap_indices_numba = gap_indices_numpy


# ------------------------------------------------------------ ray casting

def raycast_boxes_numpy(dirs: np.ndarray, centers: np.ndarray, dims: np.ndarray,
                        yaws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First hit of unit rays from the origin against yawed boxes.

    Returns ``(t, box_index)``; ``t`` is ``inf`` and index ``-1`` on a miss.
    Rays starting inside a box do not hit it.
    """
    n = len(dirs)
    best_t = np.full(n, np.inf)
    best_k = np.full(n, -1, np.int64)
    for k in range(len(centers)):
        c, s = np.cos(yaws[k]), np.sin(yaws[k])
        o = -centers[k]
        ol = np.array([c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]])
        dl = np.column_stack([c * dirs[:, 0] + s * dirs[:, 1], -s * dirs[:, 0] + c * dirs[:, 1], dirs[:, 2]])
        half = dims[k] / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - ol) / dl
            t2 = (half - ol) / dl
        lo = np.fmin(t1, t2)
        hi = np.fmax(t1, t2)
        # parallel rays: inside the slab means unbounded, outside means miss
        parallel = dl == 0
        inside = np.abs(ol) <= half
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        tmin = lo.max(axis=1)
        tmax = hi.min(axis=1)
        hit = (tmax >= tmin) & (tmin > 0) & (tmin < best_t)
        best_t[hit] = tmin[hit]
        best_k[hit] = k
    return best_t, best_k


if HAVE_NUMBA:

    @njit(cache=True)
    def _raycast_kernel(dirs, centers, dims, yaws):
        n = dirs.shape[0]
        best_t = np.full(n, np.inf)
        best_k = np.full(n, -1, np.int64)
        ol = np.empty(3)
        dl = np.empty(3)
        for k in range(centers.shape[0]):
            c = np.cos(yaws[k])
            s = np.sin(yaws[k])
            ox, oy, oz = -centers[k, 0], -centers[k, 1], -centers[k, 2]
            ol[0] = c * ox + s * oy
            ol[1] = -s * ox + c * oy
            ol[2] = oz
            for i in range(n):
                dl[0] = c * dirs[i, 0] + s * dirs[i, 1]
                dl[1] = -s * dirs[i, 0] + c * dirs[i, 1]
                dl[2] = dirs[i, 2]
                tmin = -np.inf
                tmax = np.inf
                miss = False
                for a in range(3):
                    half = dims[k, a] / 2.0
                    if dl[a] == 0.0:
                        if abs(ol[a]) > half:
                            miss = True
                            break
                    else:
                        t1 = (-half - ol[a]) / dl[a]
                        t2 = (half - ol[a]) / dl[a]
                        if t1 > t2:
                            t1, t2 = t2, t1
                        if t1 > tmin:
                            tmin = t1
                        if t2 < tmax:
                            tmax = t2
                if miss or tmax < tmin or tmin <= 0.0:
                    continue
                if tmin < best_t[i]:
                    best_t[i] = tmin
                    best_k[i] = k
        return best_t, best_k

    def raycast_boxes_numba(dirs, centers, dims, yaws):
        return _raycast_kernel(
            np.ascontiguousarray(dirs, dtype=np.float64),
            np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(dims, dtype=np.float64).reshape(-1, 3),
            np.ascontiguousarray(yaws, dtype=np.float64).reshape(-1),
        )

else:  # pragma: no cover
    raycast_boxes_numba = raycast_boxes_numpy


def cluster_labels(xyz, tolerance):
    return (cluster_labels_numba if USE_NUMBA else cluster_labels_numpy)(xyz, tolerance)


def gap_indices(sorted_az, threshold):
    return (gap_indices_numba if USE_NUMBA else gap_indices_numpy)(sorted_az, threshold)


def raycast_boxes(dirs, centers, dims, yaws):
    if len(centers) == 0:
        return np.full(len(dirs), np.inf), np.full(len(dirs), -1, np.int64)
    return (raycast_boxes_numba if USE_NUMBA else raycast_boxes_numpy)(dirs, centers, dims, yaws)
