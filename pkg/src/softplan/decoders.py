"""Decoder heads over shared triplane features.

All heads work in an object-centred frame: a query p is decoded as
p - center, where center is the horizontal centroid of the observation
(z stays absolute so the floor keeps its meaning).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neural import Mlp
from .triplane import FEATURE_DIM, RESOLUTION, FeatureField, interp_matrix, scatter_points

LOCAL_LO = np.array([-0.3, -0.3, -0.05])
LOCAL_HI = np.array([0.3, 0.3, 0.35])
HIDDEN = 32
DEPTH = 4
EMBED_DIM = 32
OBS_CHANNELS = 4     # [1, p - c]
DYN_CHANNELS = 7     # [1, p_g - p_i, p_r - c]


@dataclass
class Context:
    """Per-observation inputs shared by all heads."""

    center: np.ndarray
    obs: FeatureField | None = None
    dyn: FeatureField | None = None

    def local(self, points):
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center


def action_features(points, action):
    """Per-point (p_g - p_i, p_r) as an (n, 6) array."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("observation is empty")
    p_g = np.asarray(action.p_g, dtype=np.float64)
    p_r = np.asarray(action.p_r, dtype=np.float64)
    return np.hstack([p_g - points, np.broadcast_to(p_r, points.shape)])


def make_context(obs_points, action=None, center=None, res=RESOLUTION):
    """Scatter observation (and optionally action) features into fields."""
    pts = np.asarray(obs_points, dtype=np.float64).reshape(-1, 3)
    if center is None:
        if len(pts) == 0:
            raise ValueError("cannot centre an empty observation")
        center = np.array([pts[:, 0].mean(), pts[:, 1].mean(), 0.0])
    center = np.asarray(center, dtype=np.float64)
    loc = pts - center
    ones = np.ones((len(pts), 1))
    obs = scatter_points(loc, np.hstack([ones, loc]), LOCAL_LO, LOCAL_HI, res)
    dyn = None
    if action is not None:
        feats = action_features(pts, action)
        feats[:, 3:] -= center
        dyn = scatter_points(loc, np.hstack([ones, feats]), LOCAL_LO, LOCAL_HI, res)
    return Context(center, obs, dyn)


@dataclass
class Model:
    """Shared geometry features plus the three decoders.

    geometry feature psi(p) = base(p) + obs(p) @ lift, where base is a
    learnable FeatureField and obs the scattered observation field.
    """

    base: FeatureField
    lift: np.ndarray
    occ: Mlp
    corr: Mlp
    flow: Mlp
    fusion: bool = True
    meta: dict = field(default_factory=dict)

    @classmethod
    def create(cls, rng, fusion=True, res=RESOLUTION, dim=FEATURE_DIM, hidden=HIDDEN,
               depth=DEPTH, lo=LOCAL_LO, hi=LOCAL_HI, zero_last=False, plane_scale=0.1):
        base = FeatureField(rng.normal(0.0, plane_scale, (3, res, res, dim)), lo, hi)
        bound = np.sqrt(6.0 / (OBS_CHANNELS + dim))
        lift = rng.uniform(-bound, bound, (OBS_CHANNELS, dim))
        widths = [hidden] * depth
        occ = Mlp([3 + dim, *widths, 1], "sigmoid", skips=(2,), rng=rng, zero_last=zero_last)
        corr = Mlp([3 + dim, *widths, EMBED_DIM], "linear", skips=(2,), rng=rng,
                   zero_last=zero_last)
        extra = [dim] + widths if fusion else None
        flow = Mlp([3 + DYN_CHANNELS, *widths, 3], "linear", extra_dims=extra, rng=rng,
                   zero_last=zero_last)
        if fusion:
            # fused rows start at zero so both variants begin as the same function
            for l, e in enumerate(flow.extra_dims):
                flow.weights[l][flow.in_dim(l) - e:] = 0.0
        return cls(base, lift, occ, corr, flow, fusion)

    def __post_init__(self):
        if self.fusion:
            want = [self.base.dim] + [self.occ.sizes[l + 1] for l in range(self.occ.n_layers - 1)]
            if self.flow.extra_dims != want:
                raise ValueError(f"flow fusion widths {self.flow.extra_dims} do not match "
                                 f"occupancy head {want}")
        if self.occ.sizes[0] != 3 + self.base.dim or self.corr.sizes[0] != 3 + self.base.dim:
            raise ValueError("decoder input width must be 3 + feature dim")
        if self.lift.shape != (OBS_CHANNELS, self.base.dim):
            raise ValueError(f"lift must be {(OBS_CHANNELS, self.base.dim)}")

    # parameters -----------------------------------------------------------
    def named_params(self):
        out = {"base": self.base.planes, "lift": self.lift}
        for name, mlp in (("occ", self.occ), ("corr", self.corr), ("flow", self.flow)):
            for l in range(mlp.n_layers):
                out[f"{name}.W{l}"] = mlp.weights[l]
                out[f"{name}.b{l}"] = mlp.biases[l]
        return out

    def params(self):
        return list(self.named_params().values())

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.named_params().items()}

    def context(self, obs_points, action=None, center=None):
        return make_context(obs_points, action, center, self.base.res)

    # geometry -------------------------------------------------------------
    def geometry(self, ctx, points):
        loc = ctx.local(points)
        W = interp_matrix(loc, self.base.lo, self.base.hi, self.base.res)
        psi = self.base.query(loc, W)
        s = None
        if ctx.obs is not None:
            if ctx.obs.res != self.base.res:
                raise ValueError("observation field resolution differs from the model's")
            s = np.asarray(W @ ctx.obs.planes.reshape(-1, ctx.obs.dim))
            psi = psi + s @ self.lift
        return psi, {"loc": loc, "W": W, "s": s}

    def geometry_backward(self, cache, dpsi, grads):
        grads["base"] += self.base.backward(cache["W"], dpsi)
        if cache["s"] is not None:
            grads["lift"] += cache["s"].T @ dpsi

    # heads ----------------------------------------------------------------
    def occupancy(self, ctx, points):
        psi, gc = self.geometry(ctx, points)
        y, c = self.occ.forward(np.hstack([gc["loc"], psi]))
        return y[:, 0], {"geo": gc, "psi": psi, "mlp": c}

    def occupancy_backward(self, cache, dprob, grads, d_hidden=None, through_sigmoid=True,
                           dpsi_extra=None):
        dy = np.asarray(dprob, dtype=np.float64).reshape(-1, 1)
        g, dx, _ = self.occ.backward(cache["mlp"], dy, d_hidden, through_sigmoid)
        self._add(grads, "occ", g)
        dpsi = dx[:, 3:]
        if dpsi_extra is not None:
            dpsi = dpsi + dpsi_extra
        self.geometry_backward(cache["geo"], dpsi, grads)

    def embed(self, ctx, points):
        psi, gc = self.geometry(ctx, points)
        y, c = self.corr.forward(np.hstack([gc["loc"], psi]))
        return y, {"geo": gc, "mlp": c}

    def embed_backward(self, cache, dfeat, grads):
        g, dx, _ = self.corr.backward(cache["mlp"], dfeat)
        self._add(grads, "corr", g)
        self.geometry_backward(cache["geo"], dx[:, 3:], grads)

    def dynamics(self, ctx, loc):
        if ctx.dyn is None:
            raise ValueError("context has no action features")
        return ctx.dyn.query(loc)

    def flow_predict(self, ctx, points, occ_cache=None):
        """(n, 3) flow. occ_cache holds the occupancy pass at the same points
        (its psi and hidden activations are the fused inputs); computed if absent."""
        loc = ctx.local(points)
        phi = self.dynamics(ctx, loc)
        extras = None
        if self.fusion:
            if occ_cache is None:
                _, occ_cache = self.occupancy(ctx, points)
            extras = [occ_cache["psi"], *occ_cache["mlp"]["hidden"]]
        y, c = self.flow.forward(np.hstack([loc, phi]), extras)
        return y, {"mlp": c, "occ": occ_cache}

    def flow_backward(self, cache, dflow, grads):
        g, _, d_extras = self.flow.backward(cache["mlp"], dflow)
        self._add(grads, "flow", g)
        if self.fusion:
            n = len(dflow)
            self.occupancy_backward(cache["occ"], np.zeros(n), grads,
                                    d_hidden=d_extras[1:], dpsi_extra=d_extras[0])

    @staticmethod
    def _add(grads, name, g):
        for l in range(len(g) // 2):
            grads[f"{name}.W{l}"] += g[2 * l]
            grads[f"{name}.b{l}"] += g[2 * l + 1]

    # persistence ----------------------------------------------------------
    def to_json(self):
        return {
            "base": {"planes": self.base.planes.ravel().tolist(), "shape": list(self.base.planes.shape),
                     "lo": self.base.lo.tolist(), "hi": self.base.hi.tolist()},
            "lift": self.lift.tolist(),
            "occ": self.occ.to_json(), "corr": self.corr.to_json(), "flow": self.flow.to_json(),
            "fusion": self.fusion, "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d):
        b = d["base"]
        base = FeatureField(np.asarray(b["planes"], dtype=np.float64).reshape(b["shape"]),
                            b["lo"], b["hi"])
        return cls(base, np.asarray(d["lift"], dtype=np.float64), Mlp.from_json(d["occ"]),
                   Mlp.from_json(d["corr"]), Mlp.from_json(d["flow"]), bool(d["fusion"]),
                   dict(d.get("meta", {})))


def occupancy(model, ctx, points):
    return model.occupancy(ctx, points)[0]


def embed(model, ctx, points):
    return model.embed(ctx, points)[0]


def flow(model, ctx, points):
    return model.flow_predict(ctx, points)[0]


def grid_points(lo, hi, n):
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass
class StateSet:
    points: np.ndarray
    empty: bool


def extract_state(model, ctx, tau=0.75, candidates=None, n=24):
    """Candidate points whose occupancy exceeds tau (default: a grid over the
    local box, shifted to the context centre)."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    if candidates is None:
        candidates = grid_points(model.base.lo, model.base.hi, n) + ctx.center
    candidates = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    prob = model.occupancy(ctx, candidates)[0]
    keep = candidates[prob > tau]
    return StateSet(keep, len(keep) == 0)
