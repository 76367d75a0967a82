"""Feature-space correspondence and the scores built on it."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import sq_norms

# Inlier distance and recall fraction used by the registration literature;
# distances shrink by 10x for desk-sized objects, the fraction does not.
TAU1 = 0.1
TAU2 = 0.05
ACC_RADIUS = 0.05
DESK_SCALE = 0.1
DESK_TAU1 = TAU1 * DESK_SCALE
DESK_ACC_RADIUS = ACC_RADIUS * DESK_SCALE


@dataclass
class Correspondence:
    index: np.ndarray   # source i -> target index[i]
    dist: np.ndarray    # feature distance of each chosen pair


def match(features_src, features_tgt, chunk_elems=1 << 22):
    """Nearest target in feature space for every source point.

    The summed-distance objective splits per source point, so per-point
    argmin is its exact minimiser. Ties go to the lowest target index.
    """
    fs = np.asarray(features_src, dtype=np.float64)
    ft = np.asarray(features_tgt, dtype=np.float64)
    if fs.ndim != 2 or ft.ndim != 2 or fs.shape[1] != ft.shape[1]:
        raise ValueError("feature arrays must be (n, D) with equal D")
    if len(fs) == 0 or len(ft) == 0:
        raise ValueError("match needs nonempty feature sets")
    rows = max(1, chunk_elems // (len(ft) * fs.shape[1]))
    index = np.empty(len(fs), dtype=np.int64)
    best = np.empty(len(fs))
    for s in range(0, len(fs), rows):
        d2 = ((fs[s:s + rows, None, :] - ft[None, :, :]) ** 2).sum(axis=2)
        j = np.argmin(d2, axis=1)
        index[s:s + rows] = j
        best[s:s + rows] = d2[np.arange(len(j)), j]
    return Correspondence(index, np.sqrt(best))


def _mapping(xi):
    return np.asarray(xi.index if isinstance(xi, Correspondence) else xi, dtype=np.int64)


def d_corr(points_src, points_tgt, xi):
    """Mean squared distance between each source point and its match."""
    src = np.asarray(points_src, dtype=np.float64)
    tgt = np.asarray(points_tgt, dtype=np.float64)
    xi = _mapping(xi)
    if len(xi) != len(src):
        raise ValueError("mapping must cover every source point")
    if len(src) == 0:
        raise ValueError("empty source set")
    return math.fsum(sq_norms(src - tgt[xi])) / len(src)


def _errors(xi_pred, xi_gt, points):
    pts = np.asarray(points, dtype=np.float64)
    pred = _mapping(xi_pred)
    gt = _mapping(xi_gt)
    if pred.shape != gt.shape:
        raise ValueError("mappings must cover the same source points")
    if len(pred) == 0:
        raise ValueError("empty mapping")
    return np.sqrt(sq_norms(pts[gt] - pts[pred]))


def inlier_fraction(xi_pred, xi_gt, points, tau1=TAU1):
    """Fraction of sources whose predicted target lies within tau1 of the true one.

    points are the target-state positions both mappings index into.
    """
    err = _errors(xi_pred, xi_gt, points)
    return int(np.count_nonzero(err < tau1)) / len(err)


def fmr(xi_pred, xi_gt, points, tau1=TAU1, tau2=TAU2):
    """Recall bit for one state pair: 1 if the inlier fraction exceeds tau2."""
    return int(inlier_fraction(xi_pred, xi_gt, points, tau1) > tau2)


def fmr_mean(pairs, tau1=TAU1, tau2=TAU2):
    """Mean recall bit over (xi_pred, xi_gt, points) triples."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs")
    return sum(fmr(p, g, x, tau1, tau2) for p, g, x in pairs) / len(pairs)


def corr_accuracy(xi_pred, xi_gt, points, radius=ACC_RADIUS):
    return inlier_fraction(xi_pred, xi_gt, points, radius)
