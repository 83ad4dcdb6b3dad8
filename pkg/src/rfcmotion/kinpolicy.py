"""CVAE kinematic policy: GRU encoder q(z | past, future) and autoregressive GRU decoder.

Poses are encoded per frame in the heading-local frame:
``[root height, root tilt (rotvec, 3), planar root velocity in the previous
heading frame (2), yaw rate, q_nr]``. The velocity terms are backward
differences, so a feature sequence plus one anchoring world frame maps back to
world coordinates exactly (:func:`features_to_frames`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import net, quat
from .clips import FRAME_RATE
from .errors import ConfigError, ContractError

PAST = 30
FUTURE = 60


def _wrap(a):
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def pose_dim(model):
    return 7 + model.actuated_dof_count


def frames_to_features(frames, fps=FRAME_RATE):
    """Heading-local pose features for every frame of a ``(T, nq)`` world sequence."""
    frames = np.asarray(frames, dtype=float)
    T = len(frames)
    if T < 2:
        raise ContractError("need at least 2 frames for velocity features")
    root = frames[:, 3:7]
    yaw = quat.yaw(root)
    tilt = quat.log(quat.remove_heading(root))
    dt = 1.0 / fps
    d = frames[1:, [0, 2]] - frames[:-1, [0, 2]]
    prev = yaw[:-1]
    # world displacement into the previous heading frame (forward = body +x)
    fwd = (d[:, 0] * np.cos(prev) - d[:, 1] * np.sin(prev)) / dt
    lat = (d[:, 0] * np.sin(prev) + d[:, 1] * np.cos(prev)) / dt
    rate = _wrap(yaw[1:] - yaw[:-1]) / dt
    vel = np.stack([fwd, lat, rate], 1)
    vel = np.concatenate([vel[:1], vel], 0)
    return np.concatenate([frames[:, 1:2], tilt, vel, frames[:, 7:]], 1)


def features_to_frames(features, anchor, fps=FRAME_RATE):
    """World frames for ``features`` following the world frame ``anchor``."""
    features = np.asarray(features, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    dt = 1.0 / fps
    x, z = anchor[0], anchor[2]
    yaw = float(quat.yaw(anchor[3:7]))
    out = np.empty((len(features), len(anchor)))
    for t, f in enumerate(features):
        c, s = np.cos(yaw), np.sin(yaw)
        x += (c * f[4] + s * f[5]) * dt
        z += (-s * f[4] + c * f[5]) * dt
        yaw += f[6] * dt
        out[t, 0], out[t, 1], out[t, 2] = x, f[0], z
        out[t, 3:7] = quat.mul(quat.from_yaw(yaw), quat.exp(f[1:4]))
        out[t, 7:] = f[7:]
    return out


# -- model -------------------------------------------------------------------

@dataclass
class CvaeConfig:
    past: int = PAST
    future: int = FUTURE
    z_dim: int = 128
    hidden: int = 128
    beta: float = 10.0
    kl_tolerance: float = 10.0
    batch: int = 10000
    minibatch: int = 256
    lr: float = 1e-3
    fixed_epochs: int = 200
    decay_epochs: int = 800

    def __post_init__(self):
        if min(self.past, self.future, self.z_dim, self.hidden, self.minibatch) < 1:
            raise ConfigError("CVAE sizes must be positive")
        if self.beta <= 0 or self.kl_tolerance < 0 or self.lr < 0:
            raise ConfigError("beta must be positive; tolerance and lr nonnegative")

    @property
    def epochs(self):
        return self.fixed_epochs + self.decay_epochs


def lr_at(config: CvaeConfig, epoch):
    """Fixed for ``fixed_epochs``, then linear decay reaching 0 after ``decay_epochs``."""
    if epoch < config.fixed_epochs:
        return config.lr
    k = epoch - config.fixed_epochs
    return config.lr * max(0.0, 1.0 - k / config.decay_epochs)


class Cvae:
    """Encoder: GRUs over past and future, MLP to (mu, log sigma).

    Decoder: GRU summary of the past, then a GRU cell fed ``[previous frame, z,
    context]`` that emits residual frame updates for ``future`` steps.
    Everything runs on standardized features.
    """

    def __init__(self, dim, config: CvaeConfig, rng=None, mean=None, std=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dim = D = int(dim)
        self.config = c = config
        H, Z = c.hidden, c.z_dim
        self.enc_past = net.Gru(D, H, rng, "enc_past.")
        self.enc_fut = net.Gru(D, H, rng, "enc_fut.")
        self.enc_head = net.Mlp([2 * H, H, 2 * Z], rng, prefix="enc_head.")
        self.dec_past = net.Gru(D, H, rng, "dec_past.")
        self.dec_cell = net.Gru(D + Z + H, H, rng, "dec_cell.")
        self.dec_out = net.Mlp([H, D], rng, out_scale=0.1, prefix="dec_out.")
        self.params = {}
        for part in self._parts():
            self.params.update(part.params)
        for part in self._parts():
            part.params = self.params  # share one flat container
        self.mean = np.zeros(D) if mean is None else np.asarray(mean, dtype=float)
        self.std = np.ones(D) if std is None else np.asarray(std, dtype=float)

    def _parts(self):
        return (self.enc_past, self.enc_fut, self.enc_head, self.dec_past, self.dec_cell, self.dec_out)

    @property
    def z_dim(self):
        return self.config.z_dim

    def standardize(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def unstandardize(self, x):
        return np.asarray(x, dtype=float) * self.std + self.mean

    # sequences below are standardized, shape (T, B, D)

    def _encode(self, past, fut):
        hp, cp = self.enc_past.forward(past)
        hf, cf = self.enc_fut.forward(fut)
        h = np.concatenate([hp[-1], hf[-1]], 1)
        out, acts = self.enc_head.forward(h)
        Z = self.z_dim
        return out[:, :Z], out[:, Z:], (cp, cf, acts)

    def _decode(self, past, z):
        hc, cc = self.dec_past.forward(past)
        ctx = hc[-1]
        prev = past[-1]
        h = np.zeros_like(ctx)
        outs, caches = [], []
        for _ in range(self.config.future):
            inp = np.concatenate([prev, z, ctx], 1)
            h, cell = self.dec_cell.cell(inp, h)
            d, acts = self.dec_out.forward(h)
            prev = prev + d
            outs.append(prev)
            caches.append((cell, acts))
        return np.stack(outs), (cc, caches)

    def encode(self, past, future):
        """Posterior ``(mu, sigma)`` for raw-feature windows ``(B, p, D)``/``(B, f, D)`` or unbatched."""
        single = np.ndim(past) == 2
        P = self.standardize(past)
        F = self.standardize(future)
        if single:
            P, F = P[None], F[None]
        mu, logs, _ = self._encode(P.transpose(1, 0, 2), F.transpose(1, 0, 2))
        sig = np.exp(logs)
        return (mu[0], sig[0]) if single else (mu, sig)

    def decode(self, past, z):
        """Mean future in raw feature units, ``(f, D)`` (or batched ``(B, f, D)``)."""
        single = np.ndim(past) == 2
        P = self.standardize(past)
        z = np.asarray(z, dtype=float)
        if single:
            P, z = P[None], z[None]
        out, _ = self._decode(P.transpose(1, 0, 2), z)
        res = self.unstandardize(out.transpose(1, 0, 2))
        return res[0] if single else res

    def sample(self, past, rng, n=None):
        z = rng.standard_normal((self.z_dim,) if n is None else (n, self.z_dim))
        if n is not None:
            past = np.broadcast_to(past, (n,) + np.shape(past))
        return self.decode(past, z), z

    # -- objective ---------------------------------------------------------

    def elbo_loss(self, past, future, eps, with_grads=True):
        """Negative ELBO averaged over the batch, with KL free bits per window.

        ``past``/``future`` are standardized ``(B, T, D)`` arrays; ``eps`` is the
        standard-normal draw of the reparametrized ``z = mu + sigma * eps``.
        Returns ``(loss, grads, parts)``.
        """
        c = self.config
        B = len(past)
        Pt = past.transpose(1, 0, 2)
        Ft = future.transpose(1, 0, 2)
        mu, logs, ecache = self._encode(Pt, Ft)
        sig = np.exp(logs)
        z = mu + sig * eps
        out, dcache = self._decode(Pt, z)
        res = out - Ft
        nll_w = 0.5 * np.sum(res * res, axis=(0, 2)) / c.beta + 0.5 * res.shape[0] * res.shape[2] * math.log(
            2 * math.pi * c.beta)
        kl_w = 0.5 * np.sum(mu * mu + sig * sig - 1.0 - 2.0 * logs, axis=1)
        active = kl_w > c.kl_tolerance
        loss = float(np.mean(nll_w + np.where(active, kl_w, c.kl_tolerance)))
        parts = {"nll": float(nll_w.mean()), "kl": float(kl_w.mean())}
        if not with_grads:
            return loss, None, parts
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g_out = res / (c.beta * B)
        g_z, g_ctx = self._decode_backward(dcache, g_out, grads)
        scale = active[:, None] / B
        g_mu = g_z + scale * mu
        g_logs = g_z * eps * sig + scale * (sig * sig - 1.0)
        self._encode_backward(ecache, np.concatenate([g_mu, g_logs], 1), grads)
        return loss, grads, parts

    def _decode_backward(self, dcache, g_out, grads):
        cc, caches = dcache
        D, Z = self.dim, self.z_dim
        T = len(caches)
        g_z = 0.0
        g_ctx = 0.0
        g_prev = np.zeros_like(g_out[0])
        g_h = np.zeros((g_out.shape[1], self.config.hidden))
        for t in range(T - 1, -1, -1):
            cell, acts = caches[t]
            g_tot = g_out[t] + g_prev
            og, g_hd = self.dec_out.backward(acts, g_tot)
            for k, v in og.items():
                grads[k] += v
            g_inp, g_h = self.dec_cell.cell_backward(cell, g_hd + g_h, grads)
            g_prev = g_tot + g_inp[:, :D]
            g_z = g_z + g_inp[:, D:D + Z]
            g_ctx = g_ctx + g_inp[:, D + Z:]
        ghs = np.zeros((len(cc),) + g_ctx.shape)
        ghs[-1] = g_ctx
        pg, _, _ = self.dec_past.backward(cc, ghs)
        for k, v in pg.items():
            grads[k] += v
        return g_z, g_ctx

    def _encode_backward(self, ecache, g_head, grads):
        cp, cf, acts = ecache
        hg, g_h = self.enc_head.backward(acts, g_head)
        for k, v in hg.items():
            grads[k] += v
        H = self.config.hidden
        for gru, cache, g in ((self.enc_past, cp, g_h[:, :H]), (self.enc_fut, cf, g_h[:, H:])):
            ghs = np.zeros((len(cache),) + g.shape)
            ghs[-1] = g
            pg, _, _ = gru.backward(cache, ghs)
            for k, v in pg.items():
                grads[k] += v

    # -- persistence -------------------------------------------------------

    def arrays(self):
        out = net.prefixed(self.params, "cvae/")
        out["cvae_norm/mean"] = self.mean
        out["cvae_norm/std"] = self.std
        return out

    def save(self, path, meta=None):
        doc = {"kind": "cvae", "dim": self.dim, "cvae": asdict(self.config)}
        doc.update(meta or {})
        net.save_checkpoint(path, self.arrays(), doc)

    @classmethod
    def load(cls, path):
        arrays, meta = net.load_checkpoint(path)
        if meta.get("kind") != "cvae":
            raise ConfigError(f"{path} is not a kinematic-policy checkpoint")
        m = cls(meta["dim"], CvaeConfig(**meta["cvae"]), mean=arrays["cvae_norm/mean"], std=arrays["cvae_norm/std"])
        for k, v in net.unprefixed(arrays, "cvae/").items():
            m.params[k][...] = v
        return m, meta


# -- data --------------------------------------------------------------------

def clip_features(clips):
    return [frames_to_features(c.frames, c.fps) for c in clips]


def window_index(feature_seqs, past=PAST, future=FUTURE):
    """All ``(clip, t)`` with ``past`` frames before ``t`` (from frame 1 on) and ``future`` from ``t``."""
    idx = []
    for ci, f in enumerate(feature_seqs):
        for t in range(past + 1, len(f) - future + 1):
            idx.append((ci, t))
    return idx


def gather_windows(feature_seqs, idx, past=PAST, future=FUTURE):
    P = np.stack([feature_seqs[c][t - past:t] for c, t in idx])
    F = np.stack([feature_seqs[c][t:t + future] for c, t in idx])
    return P, F


def kl_mc_estimate(mu, sigma, rng, samples=100000):
    """Monte-Carlo KL(N(mu, sigma^2) || N(0, I)) for a single diagonal Gaussian."""
    z = mu + sigma * rng.standard_normal((samples, len(mu)))
    logq = net.gaussian_logprob(mu, sigma, z)
    logp = net.gaussian_logprob(np.zeros_like(mu), 1.0, z)
    return float(np.mean(logq - logp))


def train_cvae(clips, config: CvaeConfig = CvaeConfig(), seed=0, log_path=None, checkpoint_dir=None,
               epochs=None):
    """Adam on the negative ELBO; lr fixed then linearly decayed (see :func:`lr_at`).

    Each epoch draws ``config.batch`` windows (with replacement) and sweeps them
    in minibatches. The log records ``epoch, lr, loss, nll, kl``. Checkpoints
    ``cvae_phase1.npz`` / ``cvae_final.npz`` are written at the phase boundaries.
    """
    if not clips:
        raise ContractError("empty dataset")
    feats = clip_features(clips)
    idx = window_index(feats, config.past, config.future)
    if not idx:
        raise ContractError(f"no clip is long enough for {config.past}+{config.future} frame windows")
    allf = np.concatenate(feats)
    mean = allf.mean(0)
    std = np.maximum(allf.std(0), 1e-3)
    rng = np.random.default_rng(seed)
    model = Cvae(allf.shape[1], config, rng, mean, std)
    stdz = [model.standardize(f) for f in feats]
    opt = net.Adam(model.params)
    total = config.epochs if epochs is None else epochs
    rows = []
    for epoch in range(total):
        lr = lr_at(config, epoch)
        pick = rng.integers(0, len(idx), size=config.batch)
        P, F = gather_windows(stdz, [idx[i] for i in pick], config.past, config.future)
        tot = {"loss": 0.0, "nll": 0.0, "kl": 0.0}
        nb = 0
        for s in range(0, len(P), config.minibatch):
            p, f = P[s:s + config.minibatch], F[s:s + config.minibatch]
            eps = rng.standard_normal((len(p), config.z_dim))
            loss, grads, parts = model.elbo_loss(p, f, eps)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite CVAE loss at epoch {epoch}")
            if lr > 0:
                opt.step(model.params, grads, lr)
            tot["loss"] += loss
            tot["nll"] += parts["nll"]
            tot["kl"] += parts["kl"]
            nb += 1
        row = {"epoch": epoch, "lr": lr, **{k: v / nb for k, v in tot.items()}}
        rows.append(row)
        if log_path is not None:
            _append(log_path, row)
        if checkpoint_dir is not None and epoch + 1 in (config.fixed_epochs, total):
            name = "cvae_phase1.npz" if epoch + 1 == config.fixed_epochs and epoch + 1 != total else "cvae_final.npz"
            model.save(Path(checkpoint_dir) / name, {"epoch": epoch + 1, "seed": seed})
    return model, rows


def _append(path, row):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(list(row))
        w.writerow([row["epoch"]] + [repr(float(v)) for k, v in row.items() if k != "epoch"])


def turn_direction(features):
    """Sign of the mean yaw rate of a feature sequence (+1 left, -1 right)."""
    return int(np.sign(np.mean(np.asarray(features)[:, 6])))
