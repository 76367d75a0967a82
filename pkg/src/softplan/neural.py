"""Dense networks in float64 with hand-written backward passes, plus Adam."""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("linear", "sigmoid")


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Mlp:
    """ReLU MLP with optional input skips and per-layer fused inputs.

    Layer l consumes concat(h_{l-1}, x if l in skips, extras[l]) where
    extras are supplied by the caller at forward time (representation
    fusion). Weights are stored as (fan_in, fan_out).
    """

    def __init__(self, sizes, out_act="linear", skips=(), extra_dims=None, rng=None,
                 zero_last=False):
        if out_act not in ACTIVATIONS:
            raise ValueError(f"out_act must be one of {ACTIVATIONS}")
        self.sizes = [int(s) for s in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.out_act = out_act
        self.skips = tuple(sorted(int(s) for s in skips))
        n = len(self.sizes) - 1
        self.extra_dims = [0] * n if extra_dims is None else [int(e) for e in extra_dims]
        if len(self.extra_dims) != n:
            raise ValueError(f"extra_dims needs {n} entries")
        if any(s <= 0 or s >= n for s in self.skips):
            raise ValueError("skip layers must be hidden layers")
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        for l in range(n):
            fan_in = self.in_dim(l)
            fan_out = self.sizes[l + 1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        if zero_last:
            self.weights[-1][:] = 0.0

    @property
    def n_layers(self):
        return len(self.weights)

    def in_dim(self, l):
        return (self.sizes[l] + (self.sizes[0] if l in self.skips else 0)
                + self.extra_dims[l])

    def params(self):
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def forward(self, x, extras=None):
        """Returns (y, cache); cache["hidden"] lists post-ReLU activations."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(f"input must be (n, {self.sizes[0]}), got {x.shape}")
        extras = [None] * self.n_layers if extras is None else list(extras)
        if len(extras) != self.n_layers:
            raise ValueError(f"extras needs {self.n_layers} entries")
        inputs, hidden = [], []
        h = x
        for l in range(self.n_layers):
            parts = [h]
            if l in self.skips:
                parts.append(x)
            if self.extra_dims[l]:
                e = extras[l]
                if e is None or e.shape != (len(x), self.extra_dims[l]):
                    raise ValueError(f"layer {l} expects fused input of width {self.extra_dims[l]}")
                parts.append(e)
            elif extras[l] is not None:
                raise ValueError(f"layer {l} takes no fused input")
            a = np.concatenate(parts, axis=1) if len(parts) > 1 else h
            inputs.append(a)
            z = a @ self.weights[l] + self.biases[l]
            if l < self.n_layers - 1:
                h = np.maximum(z, 0.0)
                hidden.append(h)
            else:
                h = sigmoid(z) if self.out_act == "sigmoid" else z
        return h, {"x": x, "inputs": inputs, "hidden": hidden, "y": h}

    def __call__(self, x, extras=None):
        return self.forward(x, extras)[0]

    def backward(self, cache, dy, d_hidden=None, through_sigmoid=True):
        """Gradients of a scalar loss.

        dy is dL/dy (or dL/dz of the last layer when through_sigmoid is
        False). d_hidden optionally adds upstream gradients on the hidden
        activations. Returns (param grads in params() order, dL/dx,
        list of dL/dextras).
        """
        dy = np.asarray(dy, dtype=np.float64)
        if dy.shape != cache["y"].shape:
            raise ValueError(f"dy shape {dy.shape} != output shape {cache['y'].shape}")
        x = cache["x"]
        d_in = self.sizes[0]
        dx = np.zeros_like(x)
        d_extras = [None] * self.n_layers
        grads = [None] * (2 * self.n_layers)
        if self.out_act == "sigmoid" and through_sigmoid:
            y = cache["y"]
            dz = dy * y * (1.0 - y)
        else:
            dz = dy
        for l in reversed(range(self.n_layers)):
            a = cache["inputs"][l]
            grads[2 * l] = a.T @ dz
            grads[2 * l + 1] = dz.sum(axis=0)
            da = dz @ self.weights[l].T
            w_prev = self.sizes[l]
            dh = da[:, :w_prev]
            off = w_prev
            if l in self.skips:
                dx += da[:, off:off + d_in]
                off += d_in
            if self.extra_dims[l]:
                d_extras[l] = da[:, off:off + self.extra_dims[l]]
            if l == 0:
                dx += dh
                break
            if d_hidden is not None and d_hidden[l - 1] is not None:
                dh = dh + d_hidden[l - 1]
            dz = dh * (cache["hidden"][l - 1] > 0.0)
        return grads, dx, d_extras

    def to_json(self):
        return {
            "sizes": self.sizes, "out_act": self.out_act, "skips": list(self.skips),
            "extra_dims": self.extra_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, d):
        m = cls(d["sizes"], d["out_act"], d["skips"], d["extra_dims"])
        m.weights = [np.asarray(w, dtype=np.float64).reshape(m.in_dim(l), m.sizes[l + 1])
                     for l, w in enumerate(d["weights"])]
        m.biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
        return m


class Adam:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, params, lr=1e-3, weight_decay=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter required")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


def opt_step(optimizer, params, grads):
    """Functional form: apply one update to `params` (the optimizer's arrays)."""
    if any(p is not q for p, q in zip(params, optimizer.params)):
        raise ValueError("params must be the arrays the optimizer was built with")
    optimizer.step(grads)
    return params
