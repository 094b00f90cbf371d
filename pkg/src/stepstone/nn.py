"""Dense-network numerics on float64 numpy arrays.

Hand-written forward and reverse passes for small MLPs and a single-layer
LSTM cell, an Adam optimizer, finite-difference gradient checking, and
bit-exact parameter serialization.  No autograd framework anywhere; the
finite-difference route exercises only the forward pass, so it stays an
independent check on the analytic gradients.
"""

from __future__ import annotations

import json
from typing import Callable, Optional, Sequence

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    # split by sign to stay overflow-free in float64
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_ACT = {
    "relu": (relu, lambda pre, out: (pre > 0).astype(float)),
    "tanh": (np.tanh, lambda pre, out: 1.0 - out * out),
    "identity": (lambda x: x, lambda pre, out: np.ones_like(pre)),
}


def orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))  # fix sign ambiguity for a proper orthonormal basis
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def fan_in_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    lim = 1.0 / np.sqrt(n_in)
    return rng.uniform(-lim, lim, size=(n_in, n_out))


class Mlp:
    """Fully-connected stack; params live in a dict shared with the optimizer."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator,
                 hidden_activation: str = "relu", out_activation: str = "identity",
                 out_scale: float = 1.0):
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        n_layers = len(widths) - 1
        self.acts = [hidden_activation] * (n_layers - 1) + [out_activation]
        for a in self.acts:
            if a not in _ACT:
                raise ValueError(f"unknown activation {a!r}")
        self.params: dict = {}
        for k in range(n_layers):
            w = fan_in_uniform(rng, widths[k], widths[k + 1])
            b = np.zeros(widths[k + 1])
            if k == n_layers - 1 and out_scale != 1.0:
                w = w * out_scale
            self.params[f"W{k}"] = w
            self.params[f"b{k}"] = b

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def forward(self, x: np.ndarray):
        """x: (B, in) -> (y, cache); cache feeds backward()."""
        cache = []
        h = x
        for k in range(self.n_layers):
            pre = h @ self.params[f"W{k}"] + self.params[f"b{k}"]
            out = _ACT[self.acts[k]][0](pre)
            cache.append((h, pre, out))
            h = out
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dy: np.ndarray):
        """Returns (dx, grads) for upstream gradient dy on the output."""
        grads = {}
        d = dy
        for k in reversed(range(self.n_layers)):
            h, pre, out = cache[k]
            d = d * _ACT[self.acts[k]][1](pre, out)
            grads[f"W{k}"] = h.T @ d
            grads[f"b{k}"] = d.sum(axis=0)
            d = d @ self.params[f"W{k}"].T
        return d, grads


class LstmCell:
    """Single-layer LSTM cell, gate order (i, f, g, o), forget bias 1."""

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_in = n_in
        self.n_hidden = n_hidden
        H = n_hidden
        wx = np.concatenate([fan_in_uniform(rng, n_in, H) for _ in range(4)], axis=1)
        wh = np.concatenate([orthogonal(rng, H, H) for _ in range(4)], axis=1)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # open forget gates early in training
        self.params = {"Wx": wx, "Wh": wh, "b": b}

    def zero_state(self, batch: int):
        H = self.n_hidden
        return np.zeros((batch, H)), np.zeros((batch, H))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """One time step over a batch; returns (h2, c2, cache)."""
        H = self.n_hidden
        pre = x @ self.params["Wx"] + h @ self.params["Wh"] + self.params["b"]
        i = sigmoid(pre[:, :H])
        f = sigmoid(pre[:, H:2 * H])
        g = np.tanh(pre[:, 2 * H:3 * H])
        o = sigmoid(pre[:, 3 * H:])
        c2 = f * c + i * g
        tc2 = np.tanh(c2)
        h2 = o * tc2
        cache = (x, h, c, i, f, g, o, c2, tc2)
        return h2, c2, cache

    def backward_step(self, cache, dh2: np.ndarray, dc2: np.ndarray, grads: dict):
        """Accumulate parameter grads in-place; returns (dx, dh, dc)."""
        x, h, c, i, f, g, o, c2, tc2 = cache
        H = self.n_hidden
        do = dh2 * tc2
        dc_total = dc2 + dh2 * o * (1.0 - tc2 * tc2)
        di = dc_total * g
        df = dc_total * c
        dg = dc_total * i
        dc = dc_total * f
        dpre = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        grads["Wx"] += x.T @ dpre
        grads["Wh"] += h.T @ dpre
        grads["b"] += dpre.sum(axis=0)
        dx = dpre @ self.params["Wx"].T
        dh = dpre @ self.params["Wh"].T
        return dx, dh, dc

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class Adam:
    """Adam with bias correction; updates the shared parameter dict in place."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t)}
        for k in self.params:
            out["m." + k] = self.m[k]
            out["v." + k] = self.v[k]
        return out

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self.m[k][...] = state["m." + k]
            self.v[k][...] = state["v." + k]


def global_grad_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_grads_(grads: dict, max_norm: float) -> float:
    """Scale grads in place to a global norm cap; returns the pre-clip norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def add_grads_(acc: dict, extra: dict, prefix: str = "") -> None:
    for k, v in extra.items():
        acc[prefix + k] += v


# -- gradient verification ----------------------------------------------------


def finite_difference_grads(loss_fn: Callable[[], float], params: dict,
                            h: float = 1e-5, keys: Optional[Sequence[str]] = None,
                            max_entries_per_array: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None) -> dict:
    """Central-difference gradients of loss_fn() w.r.t. entries of params.

    loss_fn must recompute the loss from the current parameter values.  With
    max_entries_per_array set, a random subset of entries per array is probed
    (the rest are left as NaN so callers can mask them).
    """
    keys = list(params.keys()) if keys is None else list(keys)
    out = {}
    for k in keys:
        p = params[k]
        flat = p.reshape(-1)
        g = np.full(flat.shape, np.nan)
        idx = np.arange(flat.size)
        if max_entries_per_array is not None and flat.size > max_entries_per_array:
            if rng is None:
                raise ValueError("rng required when subsampling entries")
            idx = rng.choice(flat.size, size=max_entries_per_array, replace=False)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + h
            lp = loss_fn()
            flat[j] = orig - h
            lm = loss_fn()
            flat[j] = orig
            g[j] = (lp - lm) / (2.0 * h)
        out[k] = g.reshape(p.shape)
    return out


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-6) -> float:
    """Worst-case |a - n| / max(|a|, |n|, floor) over probed entries."""
    worst = 0.0
    for k, n in numeric.items():
        a = analytic[k]
        mask = ~np.isnan(n)
        if not mask.any():
            continue
        diff = np.abs(a[mask] - n[mask])
        denom = np.maximum(np.maximum(np.abs(a[mask]), np.abs(n[mask])), floor)
        worst = max(worst, float((diff / denom).max()))
    return worst


# -- serialization -------------------------------------------------------------


def save_params(path, params: dict, meta: Optional[dict] = None) -> None:
    """Bit-exact checkpoint: float64 arrays plus a JSON metadata string."""
    meta = dict(meta or {})
    meta.setdefault("format_version", CHECKPOINT_FORMAT_VERSION)
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for k, v in params.items():
        arrays[k] = np.asarray(v)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_params(path):
    """Returns (params, meta); raises on missing or incompatible files."""
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise ValueError(f"{path} is not a parameter checkpoint")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
        params = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return params, meta


def export_params_json(path, params: dict, meta: Optional[dict] = None) -> None:
    """Human-readable mirror of a checkpoint (arrays as nested lists)."""
    meta = dict(meta or {})
    meta.setdefault("format_version", CHECKPOINT_FORMAT_VERSION)
    doc = {"meta": meta,
           "params": {k: np.asarray(v).tolist() for k, v in params.items()}}
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")
