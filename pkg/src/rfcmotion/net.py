"""Small numpy network stack: MLP, GRU, diagonal Gaussians, Adam, checkpoints.

Parameters live in flat ``dict[str, ndarray]`` containers so that the optimizer,
gradient checker and checkpoint writer treat every architecture the same way.
Batches are row-major: ``(B, features)``; sequences are ``(T, B, features)``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractError

CHECKPOINT_FORMAT = "rfcmotion.ckpt/1"
LOG_2PI = float(np.log(2.0 * np.pi))


def _uniform(rng, fan_in, shape, scale=1.0):
    bound = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- MLP -------------------------------------------------------------------

class Mlp:
    """ReLU hidden layers, linear output."""

    def __init__(self, widths, rng=None, out_scale=1.0, prefix=""):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ContractError(f"bad layer widths {widths}")
        self.widths = widths
        self.prefix = prefix
        self.params = {}
        rng = np.random.default_rng(0) if rng is None else rng
        for k in range(len(widths) - 1):
            scale = out_scale if k == len(widths) - 2 else 1.0
            self.params[f"{prefix}W{k}"] = _uniform(rng, widths[k], (widths[k], widths[k + 1]), scale)
            self.params[f"{prefix}b{k}"] = np.zeros(widths[k + 1])

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def forward(self, x, params=None):
        P = self.params if params is None else params
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ContractError(f"input has {x.shape[-1]} features, expected {self.widths[0]}")
        acts = [x]
        h = x
        for k in range(self.n_layers):
            h = h @ P[f"{self.prefix}W{k}"] + P[f"{self.prefix}b{k}"]
            if k < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, gout, params=None):
        """Returns ``(grads, grad_input)`` for the cached activations ``acts``."""
        P = self.params if params is None else params
        grads = {}
        g = np.asarray(gout, dtype=float)
        for k in range(self.n_layers - 1, -1, -1):
            if k < self.n_layers - 1:
                g = g * (acts[k + 1] > 0.0)
            a_in = acts[k]
            grads[f"{self.prefix}W{k}"] = a_in.reshape(-1, a_in.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"{self.prefix}b{k}"] = g.reshape(-1, g.shape[-1]).sum(0)
            g = g @ P[f"{self.prefix}W{k}"].T
        return grads, g


# -- GRU -------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Gru:
    """Gated recurrent unit.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    n = tanh(x Wn + bn + r * (h Un + bun)), h' = (1 - z) * n + z * h.
    """

    def __init__(self, n_in, n_hidden, rng=None, prefix="gru."):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in = int(n_in)
        self.n_hidden = H = int(n_hidden)
        self.prefix = prefix
        self.params = {
            f"{prefix}W": _uniform(rng, H, (self.n_in, 3 * H)),
            f"{prefix}U": _uniform(rng, H, (H, 3 * H)),
            f"{prefix}b": np.zeros(3 * H),
            f"{prefix}bun": np.zeros(H),
        }

    def _p(self, P):
        P = self.params if P is None else P
        pf = self.prefix
        return P[f"{pf}W"], P[f"{pf}U"], P[f"{pf}b"], P[f"{pf}bun"]

    def cell(self, x, h, params=None):
        W, U, b, bun = self._p(params)
        H = self.n_hidden
        gx = x @ W + b
        gh = h @ U
        z = _sigmoid(gx[:, :H] + gh[:, :H])
        r = _sigmoid(gx[:, H:2 * H] + gh[:, H:2 * H])
        hn = gh[:, 2 * H:] + bun
        n = np.tanh(gx[:, 2 * H:] + r * hn)
        h_new = (1.0 - z) * n + z * h
        return h_new, (x, h, z, r, n, hn)

    def cell_backward(self, cache, gh_new, grads, params=None):
        """Accumulate parameter grads into ``grads``; returns ``(grad_x, grad_h)``."""
        W, U, _, _ = self._p(params)
        x, h, z, r, n, hn = cache
        pf = self.prefix
        dn = gh_new * (1.0 - z)
        dz = gh_new * (h - n)
        dh = gh_new * z
        dan = dn * (1.0 - n * n)
        dr = dan * hn
        dhn = dan * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dgx = np.concatenate([daz, dar, dan], axis=1)
        dgh = np.concatenate([daz, dar, dhn], axis=1)
        grads[f"{pf}W"] += x.T @ dgx
        grads[f"{pf}U"] += h.T @ dgh
        grads[f"{pf}b"] += dgx.sum(0)
        grads[f"{pf}bun"] += dhn.sum(0)
        return dgx @ W.T, dh + dgh @ U.T

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, xs, h0=None, params=None):
        """Run over ``xs`` (T, B, n_in); returns ``(hs (T, B, H), caches)``."""
        xs = np.asarray(xs, dtype=float)
        T, B = xs.shape[:2]
        h = np.zeros((B, self.n_hidden)) if h0 is None else h0
        hs = np.empty((T, B, self.n_hidden))
        caches = []
        for t in range(T):
            h, c = self.cell(xs[t], h, params)
            hs[t] = h
            caches.append(c)
        return hs, caches

    def backward(self, caches, ghs, params=None):
        """BPTT given gradients on every hidden output; returns ``(grads, grad_xs, grad_h0)``."""
        grads = self.zero_grads()
        T = len(caches)
        gxs = np.empty((T,) + caches[0][0].shape)
        gh = np.zeros_like(ghs[0])
        for t in range(T - 1, -1, -1):
            gx, gh = self.cell_backward(caches[t], ghs[t] + gh, grads, params)
            gxs[t] = gx
        return grads, gxs, gh


# -- Gaussian heads --------------------------------------------------------

def gaussian_logprob(mean, std, value):
    """Diagonal Gaussian log density summed over the last axis."""
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    if np.any(std <= 0):
        raise ContractError("standard deviations must be positive")
    zsc = (np.asarray(value, dtype=float) - mean) / std
    return -0.5 * np.sum(zsc * zsc + 2.0 * np.log(std) + LOG_2PI, axis=-1)


def gaussian_sample(mean, std, rng, deterministic=False):
    mean = np.asarray(mean, dtype=float)
    if deterministic:
        return mean.copy()
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    if np.any(std <= 0):
        raise ContractError("standard deviations must be positive")
    return mean + std * rng.standard_normal(mean.shape)


class GaussianHead:
    """Covariance policy for a Gaussian output: fixed diagonal or learned log-sigma."""

    def __init__(self, dim, variance=None, learned=False):
        self.dim = int(dim)
        self.learned = learned
        if not learned:
            if variance is None or np.any(np.asarray(variance) <= 0):
                raise ContractError("fixed Gaussian heads need a positive variance")
            self.std = np.broadcast_to(np.sqrt(np.asarray(variance, dtype=float)), (self.dim,)).copy()

    def split(self, out):
        """For learned heads ``out`` holds ``[mean, log_sigma]``."""
        if self.learned:
            return out[..., :self.dim], np.exp(out[..., self.dim:])
        return out, self.std

    def logprob(self, out, value):
        mean, std = self.split(out)
        return gaussian_logprob(mean, std, value)

    def sample(self, out, rng, deterministic=False):
        mean, std = self.split(out)
        return gaussian_sample(mean, std, rng, deterministic)


# -- optimization ----------------------------------------------------------

class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, stepsize):
        """In-place update of ``params``; keys absent from ``grads`` are left alone."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ContractError(f"gradient {k} has shape {g.shape}, expected {params[k].shape}")
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= stepsize * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return params

    def state(self, prefix):
        out = {f"{prefix}t": np.array(self.t)}
        for k in self.m:
            out[f"{prefix}m/{k}"] = self.m[k]
            out[f"{prefix}v/{k}"] = self.v[k]
        return out

    def load_state(self, arrays, prefix):
        self.t = int(arrays[f"{prefix}t"])
        for k in self.m:
            self.m[k] = np.array(arrays[f"{prefix}m/{k}"])
            self.v[k] = np.array(arrays[f"{prefix}v/{k}"])


def adam_step(params, grads, optimizer_state: Adam, stepsize):
    return optimizer_state.step(params, grads, stepsize)


def gradient_check(loss_fn, params, grads, eps=1e-5, max_entries=None, rng=None):
    """Max relative error between ``grads`` and central differences of ``loss_fn(params)``.

    Relative error per entry is ``|a - n| / max(|a| + |n|, 1e-8)``. With
    ``max_entries`` only a random subset of each tensor is probed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for k, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        g = grads[k].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            lp = loss_fn(params)
            flat[i] = old - eps
            lm = loss_fn(params)
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            denom = max(abs(num) + abs(g[i]), 1e-8)
            worst = max(worst, abs(num - g[i]) / denom)
    return worst


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, arrays: dict, meta: dict):
    """One ``.npz``: every tensor under its key plus a JSON ``__meta__`` record."""
    doc = dict(meta)
    doc["format"] = CHECKPOINT_FORMAT
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__meta__"] = np.array(json.dumps(doc, sort_keys=True))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, **payload)
    tmp.replace(path)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ContractError(f"unsupported checkpoint format {meta.get('format')!r}")
        arrays = {k: np.array(data[k]) for k in data.files if k != "__meta__"}
    return arrays, meta


def prefixed(params, prefix):
    return {prefix + k: v for k, v in params.items()}


def unprefixed(arrays, prefix):
    n = len(prefix)
    return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}
