"""Joint training of all decoder heads."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoders import Model
from .losses import (COM_STD_SCALE, M_NEG, M_POS, THRES_FRACTION, ContrastiveConfig,
                     embed_points, hardest_negatives, loss_contrastive_euclid,
                     loss_contrastive_geo, pair_distances, random_material_points,
                     sample_pairs, sample_query_points)
from .metrics import flow_mse
from .neural import Adam
from .tetmesh import geodesic_table

CORR_MODES = ("geo", "euclid", "none")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    n_query: int = 512
    n_pairs: int = 256
    query_pool: int = 4096
    w_occ: float = 1.0
    w_flow: float = 10.0
    w_corr: float = 1.0
    corr: str = "geo"
    negatives: str = "hard"
    fusion: bool = True
    m_pos: float = M_POS
    m_neg: float = M_NEG
    thres_fraction: float = THRES_FRACTION
    com_std_scale: float = COM_STD_SCALE
    val_fraction: float = 0.2
    val_every: int = 25

    def __post_init__(self):
        if self.corr not in CORR_MODES:
            raise ValueError(f"corr must be one of {CORR_MODES}")
        if self.negatives not in ("hard", "random"):
            raise ValueError("negatives must be 'hard' or 'random'")
        if self.steps < 0 or self.n_query < 1 or self.n_pairs < 2:
            raise ValueError("steps >= 0, n_query >= 1 and n_pairs >= 2 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Sample:
    """One simulated action prepared for training."""

    traj: int
    ctx: object
    pre: np.ndarray
    flow: np.ndarray
    query: np.ndarray
    labels: np.ndarray


@dataclass
class TrainResult:
    model: Model
    curve: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_step: int = 0
    aborted: bool = False


def prepare(mesh, trajectories, model, rng, cfg):
    samples = []
    for t, records in enumerate(trajectories):
        for rec in records:
            obs = rec["observation"]
            pts = obs.points if hasattr(obs, "points") else np.asarray(obs["points"])
            ctx = model.context(pts, rec["action"])
            q, lab = sample_query_points(mesh, rec["pre"], rng, cfg.query_pool, cfg.com_std_scale)
            samples.append(Sample(t, ctx, np.asarray(rec["pre"]), np.asarray(rec["flow"]), q, lab))
    return samples


def split(samples, fraction, rng):
    """Hold out the last `fraction` of a seeded permutation for validation."""
    n_val = int(round(fraction * len(samples)))
    if n_val == 0 or n_val == len(samples):
        return samples, []
    perm = rng.permutation(len(samples))
    train = [samples[i] for i in sorted(perm[n_val:])]
    val = [samples[i] for i in sorted(perm[:n_val])]
    return train, val


def eval_flow(model, samples):
    """Mean full-object flow MSE over samples."""
    return math.fsum(flow_mse(model.flow_predict(s.ctx, s.pre)[0], s.flow) for s in samples) / len(samples)


def _step_loss(model, mesh, table, ccfg, s, partner, rng, cfg):
    grads = model.zero_grads()
    # occupancy: BCE on pooled query points, gradient taken at the logit
    idx = rng.integers(0, len(s.query), cfg.n_query)
    pts, lab = s.query[idx], s.labels[idx]
    prob, oc = model.occupancy(s.ctx, pts)
    eps = 1e-12
    bce = -float(np.mean(lab * np.log(prob + eps) + (~lab) * np.log(1 - prob + eps)))
    model.occupancy_backward(oc, cfg.w_occ * (prob - lab) / len(pts), grads, through_sigmoid=False)
    # flow at every vertex of the pre-action state
    pred, fc = model.flow_predict(s.ctx, s.pre)
    err = pred - s.flow
    mse = float((err * err).sum() / len(err))
    model.flow_backward(fc, cfg.w_flow * 2.0 * err / len(err), grads)
    total = cfg.w_occ * bce + cfg.w_flow * mse
    lc = 0.0
    if cfg.corr != "none":
        if cfg.negatives == "hard":
            lc = _mined_corr(model, mesh, table, ccfg, s, partner, rng, cfg, grads)
        else:
            pairs = sample_pairs(mesh, table, s.pre, partner.pre, cfg.n_pairs, rng, ccfg, cfg.corr)
            fp, ec_p = model.embed(s.ctx, pairs.p)
            fq, ec_q = model.embed(partner.ctx, pairs.q)
            if cfg.corr == "geo":
                lc, dfp, dfq = loss_contrastive_geo(fp, fq, pairs.d_geo, ccfg, with_grad=True)
            else:
                lc, dfp, dfq = loss_contrastive_euclid(fp, fq, pairs.positive, ccfg, with_grad=True)
            model.embed_backward(ec_p, cfg.w_corr * dfp, grads)
            model.embed_backward(ec_q, cfg.w_corr * dfq, grads)
        total += cfg.w_corr * lc
    return {"total": total, "occ": bce, "flow": mse, "corr": lc}, grads


def _mined_corr(model, mesh, table, ccfg, s, partner, rng, cfg, grads):
    """Same-point positives plus, per anchor, the hardest pool point that the
    active rule (geodesic or Euclidean distance) admits as a negative."""
    n = cfg.n_pairs // 2
    ta, ba = random_material_points(mesh, rng, n)
    tb, bb = random_material_points(mesh, rng, cfg.n_pairs)
    d_geo, d_euc = pair_distances(mesh, table, s.pre, partner.pre, ta, ba, tb, bb)
    allowed = (d_geo if cfg.corr == "geo" else d_euc) >= ccfg.d_thres
    f_a, ca = model.embed(s.ctx, embed_points(mesh, s.pre, ta, ba))
    qb = np.vstack([embed_points(mesh, partner.pre, ta, ba), embed_points(mesh, partner.pre, tb, bb)])
    f_b, cb = model.embed(partner.ctx, qb)
    f_pos, f_pool = f_b[:n], f_b[n:]
    j = hardest_negatives(f_a, f_pool, allowed)
    ok = np.nonzero(j >= 0)[0]
    jj = j[ok]
    fp = np.vstack([f_a, f_a[ok]])
    fq = np.vstack([f_pos, f_pool[jj]])
    if cfg.corr == "geo":
        d = np.concatenate([np.zeros(n), d_geo[ok, jj]])
        lc, dfp, dfq = loss_contrastive_geo(fp, fq, d, ccfg, with_grad=True)
    else:
        lab = np.arange(len(fp)) < n
        lc, dfp, dfq = loss_contrastive_euclid(fp, fq, lab, ccfg, with_grad=True)
    dfa = dfp[:n].copy()
    np.add.at(dfa, ok, dfp[n:])
    dfb = np.zeros_like(f_b)
    dfb[:n] = dfq[:n]
    np.add.at(dfb, n + jj, dfq[n:])
    model.embed_backward(ca, cfg.w_corr * dfa, grads)
    model.embed_backward(cb, cfg.w_corr * dfb, grads)
    return lc


def train(mesh, trajectories, cfg=TrainConfig(), model=None, log=None):
    """Train all heads jointly; keeps the parameters with the lowest
    validation flow MSE (training samples stand in when nothing is held out).
    A non-finite loss stops training and restores those parameters."""
    if not trajectories or not any(len(t) for t in trajectories):
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = Model.create(rng, fusion=cfg.fusion)
    table = geodesic_table(mesh)
    ccfg = ContrastiveConfig(cfg.m_pos, cfg.m_neg, cfg.thres_fraction * table.diameter)
    samples = prepare(mesh, trajectories, model, rng, cfg)
    train_set, val_set = split(samples, cfg.val_fraction, rng)
    monitor = val_set or train_set
    by_traj = {}
    for s in train_set:
        by_traj.setdefault(s.traj, []).append(s)
    opt = Adam(model.params(), cfg.lr, cfg.weight_decay)
    result = TrainResult(model)
    best = (eval_flow(model, monitor), 0, [p.copy() for p in model.params()])
    result.val.append((0, best[0]))
    names = list(model.named_params())
    for step in range(1, cfg.steps + 1):
        s = train_set[int(rng.integers(len(train_set)))]
        group = by_traj[s.traj]
        partner = group[int(rng.integers(len(group)))]
        losses, grads = _step_loss(model, mesh, table, ccfg, s, partner, rng, cfg)
        if not all(math.isfinite(v) for v in losses.values()):
            result.aborted = True
            break
        opt.step([grads[k] for k in names])
        row = {"step": step, **losses}
        result.curve.append(row)
        if log is not None:
            log(row)
        if step % cfg.val_every == 0 or step == cfg.steps:
            v = eval_flow(model, monitor)
            result.val.append((step, v))
            if math.isfinite(v) and v < best[0]:
                best = (v, step, [p.copy() for p in model.params()])
    for p, b in zip(model.params(), best[2]):
        p[...] = b
    result.best_step = best[1]
    model.meta.update({"train_config": asdict(cfg), "config_hash": cfg.hash(),
                       "d_thres": ccfg.d_thres, "best_step": best[1], "mesh_id": mesh.mesh_id})
    return result
