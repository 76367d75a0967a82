"""Three axis-aligned feature planes queried by projection and bilinear lookup."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

# (u, v) world axes for the xy, xz and yz planes
PLANE_AXES = ((0, 1), (0, 2), (1, 2))
RESOLUTION = 32
FEATURE_DIM = 64


@dataclass
class FeatureField:
    """planes: (3, R, R, D); node (i, j) of a plane sits at lo + (i, j) * cell."""

    planes: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    empty: bool = False

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if self.planes.ndim != 4 or self.planes.shape[0] != 3 or self.planes.shape[1] != self.planes.shape[2]:
            raise ValueError(f"planes must be (3, R, R, D), got {self.planes.shape}")
        if self.planes.shape[1] < 2:
            raise ValueError("resolution must be at least 2")
        if not np.all(self.hi > self.lo):
            raise ValueError("bounding box is degenerate")

    @classmethod
    def zeros(cls, lo, hi, res=RESOLUTION, dim=FEATURE_DIM):
        return cls(np.zeros((3, res, res, dim)), lo, hi)

    @property
    def res(self):
        return self.planes.shape[1]

    @property
    def dim(self):
        return self.planes.shape[3]

    def weights(self, points):
        return interp_matrix(points, self.lo, self.hi, self.res)

    def query(self, points, W=None):
        """(n, 3) points -> (n, D) summed plane features."""
        W = self.weights(points) if W is None else W
        return W @ self.planes.reshape(-1, self.dim)

    def backward(self, W, dfeat):
        """Gradient of the planes given dL/d(query) for the points behind W."""
        return np.asarray(W.T @ dfeat).reshape(self.planes.shape)


def _grid_coords(points, lo, hi, res):
    g = (np.asarray(points, dtype=np.float64) - lo) / (hi - lo) * (res - 1)
    g = np.clip(g, 0.0, res - 1)
    i0 = np.minimum(np.floor(g).astype(np.int64), res - 2)
    return i0, g - i0


def interp_matrix(points, lo, hi, res):
    """Sparse (n, 3*R*R) matrix of bilinear weights over all three planes.

    Each row has 12 entries (4 corners per plane); clamped to the box.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    i0, t = _grid_coords(points, lo, hi, res)
    rows, cols, vals = [], [], []
    r = np.arange(n)
    for k, (a, b) in enumerate(PLANE_AXES):
        ia, ib, ta, tb = i0[:, a], i0[:, b], t[:, a], t[:, b]
        base = k * res * res
        for da, db, w in ((0, 0, (1 - ta) * (1 - tb)), (1, 0, ta * (1 - tb)),
                          (0, 1, (1 - ta) * tb), (1, 1, ta * tb)):
            rows.append(r)
            cols.append(base + (ia + da) * res + (ib + db))
            vals.append(w)
    W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, 3 * res * res))
    return W


def query(field, points):
    return field.query(points)


def scatter_points(points, features, lo, hi, res=RESOLUTION):
    """Splat per-point features onto the planes with bilinear weights and
    average per node (weighted mean). Nodes no point touches hold zeros.
    An empty point set gives a zero field with `empty` set.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or len(features) != len(points):
        raise ValueError("need one feature row per point")
    dim = features.shape[1]
    if len(points) == 0:
        return FeatureField(np.zeros((3, res, res, dim)), lo, hi, empty=True)
    W = interp_matrix(points, lo, hi, res)
    WT = W.T.tocsr()
    num = np.asarray(WT @ features)
    den = np.asarray(WT @ np.ones(len(points))).ravel()
    out = np.zeros_like(num)
    hit = den > 0
    out[hit] = num[hit] / den[hit, None]
    return FeatureField(out.reshape(3, res, res, dim), lo, hi)
