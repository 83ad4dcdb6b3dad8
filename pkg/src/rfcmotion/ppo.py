"""Rollout collection, GAE and clipped-surrogate PPO."""

from __future__ import annotations

import csv
import math
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import net
from .env import make_state_features  # noqa: F401  (re-exported)
from .errors import ContractError

LOG_COLUMNS = ["epoch", "mean_return_im", "mean_return_total", "episode_len_mean", "kl_estimate", "wall_time_s"]


@dataclass
class PpoConfig:
    gamma: float = 0.95
    lam: float = 0.95
    batch: int = 50000
    minibatch: int = 2048
    policy_lr: float = 5e-5
    value_lr: float = 3e-4
    clip: float = 0.2
    epochs: int = 2000
    passes: int = 10
    hidden: tuple = (512, 256)
    policy_variance: float = 0.1
    normalize_advantages: bool = True
    normalize_obs: bool = True
    horizon: int | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ContractError("gamma and lambda must lie in (0, 1]")
        if self.minibatch > self.batch or self.minibatch < 1:
            raise ContractError("minibatch must be between 1 and the batch size")
        if self.policy_variance <= 0:
            raise ContractError("policy variance must be positive")


# -- agent -----------------------------------------------------------------

class RunningNorm:
    """Observation whitening from running moments (Chan et al. parallel update)."""

    def __init__(self, dim, clip=10.0):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.clip = clip

    @property
    def std(self):
        if self.count < 2:
            return np.ones_like(self.mean)
        return np.sqrt(np.maximum(self.m2 / self.count, 1e-8))

    def update(self, xs):
        xs = np.asarray(xs, dtype=float)
        if len(xs) == 0:
            return
        n = float(len(xs))
        mu = xs.mean(0)
        m2 = ((xs - mu) ** 2).sum(0)
        tot = self.count + n
        delta = mu - self.mean
        self.mean = self.mean + delta * n / tot
        self.m2 = self.m2 + m2 + delta * delta * self.count * n / tot
        self.count = tot

    def __call__(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.mean) / self.std, -self.clip, self.clip)


class Agent:
    """Gaussian policy with fixed diagonal covariance plus a separate value MLP."""

    def __init__(self, obs_dim, act_dim, hidden=(512, 256), variance=0.1, rng=None, normalize=True):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.policy = net.Mlp([obs_dim, *hidden, act_dim], rng, out_scale=0.01)
        self.value = net.Mlp([obs_dim, *hidden, 1], rng)
        self.head = net.GaussianHead(act_dim, variance)
        self.norm = RunningNorm(obs_dim) if normalize else None

    @property
    def std(self):
        return self.head.std

    def normalize(self, obs):
        return obs if self.norm is None else self.norm(obs)

    def act(self, obs, rng=None, deterministic=False):
        """Returns ``(action, log_prob, value, normalized_obs)`` for one raw observation."""
        x = self.normalize(obs)[None]
        mean = self.policy(x)[0]
        a = self.head.sample(mean, rng, deterministic)
        return a, float(self.head.logprob(mean, a)), float(self.value(x)[0, 0]), x[0]

    def logprob(self, obs_n, actions):
        return self.head.logprob(self.policy(obs_n), actions)

    def arrays(self):
        out = net.prefixed(self.policy.params, "policy/")
        out.update(net.prefixed(self.value.params, "value/"))
        if self.norm is not None:
            out["norm/count"] = np.array(self.norm.count)
            out["norm/mean"] = self.norm.mean
            out["norm/m2"] = self.norm.m2
        return out

    def load_arrays(self, arrays):
        for k, v in net.unprefixed(arrays, "policy/").items():
            self.policy.params[k][...] = v
        for k, v in net.unprefixed(arrays, "value/").items():
            self.value.params[k][...] = v
        if self.norm is not None and "norm/mean" in arrays:
            self.norm.count = float(arrays["norm/count"])
            self.norm.mean = np.array(arrays["norm/mean"])
            self.norm.m2 = np.array(arrays["norm/m2"])


# -- rollouts --------------------------------------------------------------

@dataclass
class RolloutBatch:
    obs: np.ndarray  # normalized at collection time
    raw_obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    r_im: np.ndarray
    dones: np.ndarray
    episode_returns_im: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)

    def __len__(self):
        return len(self.rewards)

    @staticmethod
    def concat(parts):
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        out = RolloutBatch(*(cat(n) for n in ("obs", "raw_obs", "actions", "logp", "values",
                                             "rewards", "r_im", "dones")))
        for p in parts:
            out.episode_returns_im += p.episode_returns_im
            out.episode_returns += p.episode_returns
            out.episode_lengths += p.episode_lengths
        return out


def run_episode(agent, env, rng=None, deterministic=False, frame=None, record=None):
    """One episode; appends per-step tuples to ``record`` (a dict of lists) if given."""
    obs = env.reset(rng, frame) if frame is not None else env.reset(rng)
    ret_im = ret = 0.0
    n = 0
    while True:
        a, logp, v, xn = agent.act(obs, rng, deterministic)
        res = env.step(a)
        if record is not None:
            for key, val in (("obs", xn), ("raw_obs", obs), ("actions", a), ("logp", logp), ("values", v),
                             ("rewards", res.reward), ("r_im", res.r_im), ("dones", res.done)):
                record[key].append(val)
        ret_im += res.r_im
        ret += res.reward
        n += 1
        if res.done:
            return ret_im, ret, n
        obs = env.observe()


def _collect_worker(agent, env, quota, rng):
    rec = {k: [] for k in ("obs", "raw_obs", "actions", "logp", "values", "rewards", "r_im", "dones")}
    rets_im, rets, lens = [], [], []
    steps = 0
    while steps < quota:
        ri, r, n = run_episode(agent, env, rng, record=rec)
        rets_im.append(ri)
        rets.append(r)
        lens.append(n)
        steps += n
    arr = {k: np.asarray(v, dtype=float) for k, v in rec.items()}
    arr["dones"] = arr["dones"].astype(bool)
    return RolloutBatch(arr["obs"], arr["raw_obs"], arr["actions"], arr["logp"], arr["values"],
                        arr["rewards"], arr["r_im"], arr["dones"], rets_im, rets, lens)


def _collect_star(args):
    return _collect_worker(*args)


def worker_rngs(seed, epoch, workers):
    return [np.random.default_rng([int(seed), int(epoch), w]) for w in range(workers)]


def collect_rollouts(agent, envs, batch, seed=0, epoch=0, parallel=False) -> RolloutBatch:
    """At least ``batch`` steps of complete episodes, split evenly over one env per worker.

    Each worker draws from its own generator seeded by ``(seed, epoch, worker)``,
    so results depend on the worker count but not on scheduling.
    """
    envs = list(envs)
    W = len(envs)
    quota = int(math.ceil(batch / W))
    rngs = worker_rngs(seed, epoch, W)
    jobs = [(agent, env, quota, rng) for env, rng in zip(envs, rngs)]
    if parallel and W > 1:
        with mp.get_context("fork").Pool(W) as pool:
            parts = pool.map(_collect_star, jobs)
    else:
        parts = [_collect_star(j) for j in jobs]
    return RolloutBatch.concat(parts)


# -- advantage estimation ---------------------------------------------------

def gae(rewards, values, dones, gamma=0.95, lam=0.95):
    """GAE(lambda). ``values`` has one extra bootstrap entry; ``dones[t]`` cuts after t."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    T = len(rewards)
    if values.shape != (T + 1,):
        raise ContractError("values needs len(rewards) + 1 entries (bootstrap last)")
    adv = np.zeros(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        keep = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * values[t + 1] * keep - values[t]
        last = delta + gamma * lam * keep * last
        adv[t] = last
    return adv, adv + values[:T]


def normalize_advantages(adv):
    if len(adv) < 2:
        return adv
    sd = adv.std()
    return (adv - adv.mean()) / (sd + 1e-8)


# -- update ----------------------------------------------------------------

@dataclass
class UpdateInfo:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    kl_estimate: float = 0.0
    clip_fraction: float = 0.0
    aborted: bool = False


def surrogate_grad(logp, old_logp, adv, clip):
    """Loss ``-mean(min(rA, clip(r)A))`` and its gradient w.r.t. ``logp``."""
    ratio = np.exp(logp - old_logp)
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    use = s1 <= s2
    loss = -float(np.mean(np.minimum(s1, s2)))
    g = np.where(use, -ratio * adv, 0.0) / len(adv)
    return loss, g, float(np.mean(~use))


class PpoOptimizer:
    def __init__(self, agent: Agent, config: PpoConfig):
        self.agent = agent
        self.config = config
        self.policy_opt = net.Adam(agent.policy.params)
        self.value_opt = net.Adam(agent.value.params)

    def arrays(self):
        out = self.policy_opt.state("opt/policy/")
        out.update(self.value_opt.state("opt/value/"))
        return out

    def load_arrays(self, arrays):
        self.policy_opt.load_state(arrays, "opt/policy/")
        self.value_opt.load_state(arrays, "opt/value/")


def ppo_update(agent: Agent, optim: PpoOptimizer, batch: RolloutBatch, config: PpoConfig, rng) -> UpdateInfo:
    """Clipped-surrogate passes over shuffled minibatches; rolls back on non-finite loss."""
    values = np.append(batch.values, 0.0)
    adv, returns = gae(batch.rewards, values, batch.dones, config.gamma, config.lam)
    if config.normalize_advantages:
        adv = normalize_advantages(adv)
    snapshot = {k: v.copy() for k, v in agent.arrays().items()}
    opt_snapshot = {k: v.copy() for k, v in optim.arrays().items()}
    std = agent.std
    N = len(batch)
    info = UpdateInfo()
    pl = vl = cf = 0.0
    count = 0
    for _ in range(config.passes):
        order = rng.permutation(N)
        for s in range(0, N, config.minibatch):
            idx = order[s:s + config.minibatch]
            x = batch.obs[idx]
            a = batch.actions[idx]
            mean, acts = agent.policy.forward(x)
            logp = net.gaussian_logprob(mean, std, a)
            loss, glogp, frac = surrogate_grad(logp, batch.logp[idx], adv[idx], config.clip)
            gmean = glogp[:, None] * (a - mean) / (std * std)
            pg, _ = agent.policy.backward(acts, gmean)
            v, vacts = agent.value.forward(x)
            err = v[:, 0] - returns[idx]
            vloss = float(np.mean(err * err))
            vg, _ = agent.value.backward(vacts, (2.0 * err / len(idx))[:, None])
            finite = np.isfinite(loss) and np.isfinite(vloss) and all(
                np.all(np.isfinite(g)) for g in (*pg.values(), *vg.values()))
            if not finite:
                agent.load_arrays(snapshot)
                optim.load_arrays(opt_snapshot)
                return UpdateInfo(aborted=True)
            optim.policy_opt.step(agent.policy.params, pg, config.policy_lr)
            optim.value_opt.step(agent.value.params, vg, config.value_lr)
            pl += loss
            vl += vloss
            cf += frac
            count += 1
    new_logp = agent.logprob(batch.obs, batch.actions)
    info.kl_estimate = float(np.mean(batch.logp - new_logp))
    if count:
        info.policy_loss, info.value_loss, info.clip_fraction = pl / count, vl / count, cf / count
    return info


# -- training loop -----------------------------------------------------------

class PpoTrainer:
    """Epoch loop: collect, update, then refresh observation statistics."""

    def __init__(self, agent: Agent, envs, config: PpoConfig, seed=0, parallel=False):
        self.agent = agent
        self.envs = list(envs)
        self.config = config
        self.seed = int(seed)
        self.parallel = parallel
        self.optim = PpoOptimizer(agent, config)
        self.epoch = 0

    def run_epoch(self):
        t0 = time.perf_counter()
        batch = collect_rollouts(self.agent, self.envs, self.config.batch, self.seed, self.epoch, self.parallel)
        rng = np.random.default_rng([self.seed, self.epoch, 1 << 20])
        info = ppo_update(self.agent, self.optim, batch, self.config, rng)
        if self.agent.norm is not None and self.config.normalize_obs:
            self.agent.norm.update(batch.raw_obs)
        row = {
            "epoch": self.epoch,
            "mean_return_im": float(np.mean(batch.episode_returns_im)),
            "mean_return_total": float(np.mean(batch.episode_returns)),
            "episode_len_mean": float(np.mean(batch.episode_lengths)),
            "kl_estimate": info.kl_estimate,
            "wall_time_s": time.perf_counter() - t0,
        }
        self.epoch += 1
        return row, info

    def train(self, epochs, log_path=None, checkpoint_path=None, checkpoint_every=10, callback=None):
        rows = []
        for _ in range(epochs):
            row, info = self.run_epoch()
            rows.append(row)
            if log_path is not None:
                append_log(log_path, row)
            if checkpoint_path is not None and (self.epoch % checkpoint_every == 0 or _ == epochs - 1):
                self.save(checkpoint_path)
            if callback is not None and callback(self, row, info):
                if checkpoint_path is not None:
                    self.save(checkpoint_path)
                break
        return rows

    def save(self, path, meta=None):
        arrays = self.agent.arrays()
        arrays.update(self.optim.arrays())
        doc = {"kind": "ppo", "epoch": self.epoch, "seed": self.seed, "ppo": asdict(self.config),
               "obs_dim": self.agent.obs_dim, "act_dim": self.agent.act_dim}
        doc.update(meta or {})
        net.save_checkpoint(path, arrays, doc)

    def load(self, path):
        arrays, meta = net.load_checkpoint(path)
        if meta.get("obs_dim") != self.agent.obs_dim or meta.get("act_dim") != self.agent.act_dim:
            raise ContractError("checkpoint dimensions do not match this agent")
        self.agent.load_arrays(arrays)
        self.optim.load_arrays(arrays)
        self.epoch = int(meta["epoch"])
        return meta


def append_log(path, row):
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(LOG_COLUMNS)
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in LOG_COLUMNS[1:]])


def read_log(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def evaluate(agent, env, frame=0):
    """Mean-action episode from ``frame``: ``(return_im, return_total, length)``."""
    return run_episode(agent, env, None, deterministic=True, frame=frame)
