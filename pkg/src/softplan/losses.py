"""Contrastive correspondence losses, sampling of training points and pairs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tetmesh import inside_mask

M_POS = 0.1
M_NEG = 1.4
THRES_FRACTION = 0.1
COM_STD_SCALE = 0.5


@dataclass(frozen=True)
class ContrastiveConfig:
    m_pos: float = M_POS
    m_neg: float = M_NEG
    d_thres: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.m_pos < self.m_neg:
            raise ValueError("need 0 <= m_pos < m_neg")
        if self.d_thres <= 0:
            raise ValueError("d_thres must be positive")

    @classmethod
    def for_table(cls, table, m_pos=M_POS, m_neg=M_NEG, fraction=THRES_FRACTION):
        return cls(m_pos, m_neg, fraction * table.diameter)


def feature_distance(fp, fq):
    d = np.asarray(fp, dtype=np.float64) - np.asarray(fq, dtype=np.float64)
    return np.sqrt((d * d).sum(axis=-1)), d


def _hinge_terms(dist, positive, neg_margin, m_pos):
    pos = np.maximum(dist - m_pos, 0.0)
    neg = np.maximum(neg_margin - dist, 0.0)
    return np.where(positive, pos * pos, neg * neg), np.where(positive, 2 * pos, -2 * neg)


def _finish(fp, dist, diff, terms, dterm, with_grad):
    single = np.ndim(fp) == 1
    n = 1 if single else len(terms)
    loss = float(terms.sum() / n)
    if not with_grad:
        return loss
    safe = np.where(dist > 0, dist, 1.0)
    coef = np.where(dist > 0, dterm / safe, 0.0) / n
    dfp = coef[..., None] * diff
    return loss, dfp, -dfp


def loss_contrastive_euclid(fp, fq, is_match, cfg=ContrastiveConfig(), with_grad=False):
    """Hinge loss with fixed margins; mean over pairs when batched.

    with_grad also returns dL/dfp and dL/dfq (zero at coincident features).
    """
    dist, diff = feature_distance(fp, fq)
    positive = np.asarray(is_match, dtype=bool)
    terms, dterm = _hinge_terms(dist, positive, cfg.m_neg, cfg.m_pos)
    return _finish(fp, dist, diff, terms, dterm, with_grad)


def loss_contrastive_geo(fp, fq, d_geo, cfg=ContrastiveConfig(), with_grad=False):
    """As the Euclidean form but positives are geodesically near pairs and the
    negative margin grows with log(d_geo / d_thres)."""
    d_geo = np.asarray(d_geo, dtype=np.float64)
    if np.any(d_geo < 0):
        raise ValueError("geodesic distances must be nonnegative")
    dist, diff = feature_distance(fp, fq)
    positive = d_geo < cfg.d_thres
    with np.errstate(divide="ignore"):
        margin = np.where(positive, 0.0, np.log(np.where(positive, 1.0, d_geo) / cfg.d_thres)) + cfg.m_neg
    terms, dterm = _hinge_terms(dist, positive, margin, cfg.m_pos)
    return _finish(fp, dist, diff, terms, dterm, with_grad)


# sampling ---------------------------------------------------------------

def random_material_points(mesh, rng, n):
    """Random tets (volume-agnostic) and uniform barycentric weights."""
    tets = rng.integers(0, mesh.n_tets, n)
    bary = rng.dirichlet(np.ones(4), n)
    return tets, bary


def embed_points(mesh, positions, tets, bary):
    """World positions of material points in a deformed state."""
    return np.einsum("nk,nkd->nd", bary, positions[mesh.tets[tets]])


@dataclass
class PairBatch:
    p: np.ndarray          # points in state a
    q: np.ndarray          # points in state b
    d_geo: np.ndarray      # geodesic between the material points
    d_euc: np.ndarray      # closer of the two per-state Euclidean distances
    same: np.ndarray       # q is the material point of p
    positive: np.ndarray   # label under the chosen rule

    def __len__(self):
        return len(self.p)


def sample_pairs(mesh, table, pos_a, pos_b, n_pairs, rng, cfg, rule="geo", max_rounds=50):
    """Half same-point positives, half negatives at distance >= d_thres.

    rule "geo" measures distance along the tet graph, rule "euclid" in space
    (the nearer of the two states), which lets touching parts count as near.
    """
    if rule not in ("geo", "euclid"):
        raise ValueError("rule must be 'geo' or 'euclid'")
    n_pos = n_pairs // 2
    n_neg = n_pairs - n_pos
    t_pos, b_pos = random_material_points(mesh, rng, n_pos)
    neg_a, neg_b, got = [], [], 0
    for _ in range(max_rounds):
        if got >= n_neg:
            break
        ta, ba = random_material_points(mesh, rng, 2 * n_neg)
        tb, bb = random_material_points(mesh, rng, 2 * n_neg)
        if rule == "geo":
            d = table.dist[ta, tb]
        else:
            d = _euclid(mesh, pos_a, pos_b, ta, ba, tb, bb)
        keep = np.nonzero(d >= cfg.d_thres)[0][:n_neg - got]
        neg_a.append((ta[keep], ba[keep]))
        neg_b.append((tb[keep], bb[keep]))
        got += len(keep)
    if got < n_neg:
        raise ValueError(f"mesh {mesh.name!r} yields too few pairs beyond d_thres="
                         f"{cfg.d_thres:.4g}; use a smaller threshold")
    ta = np.concatenate([t_pos] + [a for a, _ in neg_a])
    ba = np.concatenate([b_pos] + [b for _, b in neg_a])
    tb = np.concatenate([t_pos] + [a for a, _ in neg_b])
    bb = np.concatenate([b_pos] + [b for _, b in neg_b])
    same = np.arange(len(ta)) < n_pos
    d_geo = np.where(same, 0.0, table.dist[ta, tb])
    d_euc = np.where(same, 0.0, _euclid(mesh, pos_a, pos_b, ta, ba, tb, bb))
    positive = (d_geo if rule == "geo" else d_euc) < cfg.d_thres
    return PairBatch(embed_points(mesh, pos_a, ta, ba), embed_points(mesh, pos_b, tb, bb),
                     d_geo, d_euc, same, positive)


def _euclid(mesh, pos_a, pos_b, ta, ba, tb, bb):
    da = np.linalg.norm(embed_points(mesh, pos_a, ta, ba) - embed_points(mesh, pos_a, tb, bb), axis=1)
    db = np.linalg.norm(embed_points(mesh, pos_b, ta, ba) - embed_points(mesh, pos_b, tb, bb), axis=1)
    return np.minimum(da, db)


def center_of_mass(mesh, positions):
    """Volume-weighted centroid of the tets."""
    p = positions[mesh.tets]
    vol = np.abs(np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                           np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))) / 6.0
    return (vol[:, None] * p.mean(axis=1)).sum(axis=0) / vol.sum()


def sample_query_points(mesh, positions, rng, n, scale=COM_STD_SCALE):
    """Gaussian samples around the centre of mass with per-axis std equal to
    scale times the bounding-box half extent; labelled inside/outside."""
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=bool)
    com = center_of_mass(mesh, positions)
    half = (positions.max(axis=0) - positions.min(axis=0)) / 2
    pts = com + rng.normal(size=(n, 3)) * (scale * half)
    return pts, inside_mask(mesh, positions, pts)


def hardest_negatives(f_anchor, f_pool, allowed):
    """Per anchor, the allowed pool entry nearest in feature space (-1 if none).

    allowed: (n_anchor, n_pool) mask of pairs that qualify as negatives.
    """
    d2 = ((f_anchor[:, None, :] - f_pool[None, :, :]) ** 2).sum(axis=2)
    d2 = np.where(allowed, d2, np.inf)
    j = np.argmin(d2, axis=1)
    return np.where(np.isfinite(d2[np.arange(len(j)), j]), j, -1)


def pair_distances(mesh, table, pos_a, pos_b, ta, ba, tb, bb):
    """Geodesic and (nearer-state) Euclidean distances for all anchor x pool pairs."""
    d_geo = table.dist[ta[:, None], tb[None, :]]
    d_euc = None
    for pos in (pos_a, pos_b):
        x = embed_points(mesh, pos, ta, ba)
        y = embed_points(mesh, pos, tb, bb)
        d = np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2))
        d_euc = d if d_euc is None else np.minimum(d_euc, d)
    return d_geo, d_euc
