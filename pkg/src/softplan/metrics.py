"""Point-set and ranking metrics.

Sums go through math.fsum, so results do not depend on summation order
and a plain Python loop over the same terms reproduces them bit for bit.
"""
from __future__ import annotations

import math

import numpy as np

FSCORE_TAU = 0.01


def _as_points(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3), got {a.shape}")
    return a


def sq_norms(d):
    """Row-wise squared norms, summed x then y then z."""
    return d[..., 0] ** 2 + d[..., 1] ** 2 + d[..., 2] ** 2


def sq_dist_matrix(a, b, chunk=4096):
    out = np.empty((len(a), len(b)))
    for s in range(0, len(a), chunk):
        out[s:s + chunk] = sq_norms(a[s:s + chunk, None, :] - b[None, :, :])
    return out


def nn_sq_dists(a, b):
    """For each row of a, squared distance to its nearest row of b (both directions)."""
    d = sq_dist_matrix(a, b)
    return d.min(axis=1), d.min(axis=0)


def chamfer(s1, s2, mean=False):
    """Sum (or mean, per direction) of squared nearest-neighbour distances, both ways."""
    s1, s2 = _as_points(s1, "S1"), _as_points(s2, "S2")
    if len(s1) == 0 or len(s2) == 0:
        raise ValueError("chamfer needs two nonempty sets")
    a, b = nn_sq_dists(s1, s2)
    if mean:
        return math.fsum(a) / len(a) + math.fsum(b) / len(b)
    return math.fsum(a) + math.fsum(b)


def fscore(source, gt, tau=FSCORE_TAU):
    """Returns (F, precision, recall); a point counts when its NN lies within tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    source, gt = _as_points(source, "source"), _as_points(gt, "gt")
    if len(source) == 0 or len(gt) == 0:
        return 0.0, 0.0, 0.0
    a, b = nn_sq_dists(source, gt)
    precision = int(np.count_nonzero(np.sqrt(a) < tau)) / len(source)
    recall = int(np.count_nonzero(np.sqrt(b) < tau)) / len(gt)
    if precision + recall == 0:
        return 0.0, precision, recall
    return 2 * precision * recall / (precision + recall), precision, recall


def flow_mse(pred, gt, subset=None):
    """Mean squared 3-vector error, optionally over a subset of indices
    (visible vertices for the `vis` variant, all for `full`)."""
    pred, gt = _as_points(pred, "pred"), _as_points(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth must align")
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64)
        pred, gt = pred[subset], gt[subset]
    if len(pred) == 0:
        raise ValueError("empty point set")
    return math.fsum(sq_norms(pred - gt)) / len(pred)


def miou(pred_inside, gt_inside, lo, hi, n_samples=100_000, rng=None):
    """Monte-Carlo IoU of two membership tests over a box.

    Returns (iou, empty_union). An empty union among the samples gives 0.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    pts = lo + rng.random((n_samples, 3)) * (hi - lo)
    a = np.asarray(pred_inside(pts), dtype=bool)
    b = np.asarray(gt_inside(pts), dtype=bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0, True
    return int(np.count_nonzero(a & b)) / union, False


def kendall_tau(rank_pred, rank_gt):
    """(P - Q) / (P + Q) over all item pairs; pairs tied in either ranking
    are skipped. Returns nan when every pair is tied."""
    x = np.asarray(rank_pred, dtype=np.float64).ravel()
    y = np.asarray(rank_gt, dtype=np.float64).ravel()
    if len(x) != len(y):
        raise ValueError("rankings must cover the same items")
    if len(x) < 2:
        raise ValueError("need at least two items")
    iu = np.triu_indices(len(x), 1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    prod = sx * sy
    p = int(np.count_nonzero(prod > 0))
    q = int(np.count_nonzero(prod < 0))
    if p + q == 0:
        return float("nan")
    return (p - q) / (p + q)
