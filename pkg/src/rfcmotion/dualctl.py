"""Dual-policy control: a kinematic CVAE forecasts, an RFC policy tracks in physics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .clips import MotionClip, coordinate_delta
from .env import DUAL, FALL_MARGIN, Tracker, make_state_features, state_dim
from .errors import ConfigError, ContractError
from .kinpolicy import Cvae, clip_features, features_to_frames, frames_to_features, pose_dim
from .model import HumanoidState
from .ppo import Agent, PpoConfig, PpoTrainer
from .rewards import tracking_features

SEGMENTS = 5


def check_compatible(kin: Cvae, model):
    if kin.dim != pose_dim(model):
        raise ConfigError(f"kinematic policy expects {kin.dim}-d poses, model {model.name!r} has {pose_dim(model)}")


def dataset_fall_height(clips):
    return float(min(c.frames[:, 1].min() for c in clips)) - FALL_MARGIN


def backward_velocities(anchor, frames, fps):
    """Per-frame velocity from its predecessor (``anchor`` precedes ``frames[0]``)."""
    prev = np.vstack([anchor[None], frames[:-1]])
    return coordinate_delta(prev, frames) * fps


class ReferenceStream:
    """Generated reference: seed past window plus autoregressively decoded segments."""

    def __init__(self, model, kin: Cvae, seed_frames, seed_features, fps):
        self.model = model
        self.kin = kin
        self.fps = fps
        self.world = [f for f in np.asarray(seed_frames, dtype=float)]
        self.feats = [f for f in np.asarray(seed_features, dtype=float)]
        self.track = [None] * len(self.world)
        self.segment_starts = []

    def __len__(self):
        return len(self.world)

    def extend(self, z):
        """Decode ``f`` frames conditioned on the last ``p`` reference frames."""
        p = self.kin.config.past
        past = np.array(self.feats[-p:])
        fut = self.kin.decode(past, z)
        anchor = self.world[-1]
        frames = features_to_frames(fut, anchor, self.fps)
        vel = backward_velocities(anchor, frames, self.fps)
        self.segment_starts.append(len(self.world))
        for q, qd, f in zip(frames, vel, fut):
            self.world.append(q)
            self.feats.append(f)
            self.track.append(tracking_features(self.model, q, qd))
        return frames


class DualEnv:
    """Dual-policy episodes: seed a past window, then track ``n`` generated segments.

    At step ``t`` (``p <= t < p + n f``) the policy sees ``(x_{t-1}, xhat_{t-1}, z)``
    and is rewarded for matching ``xhat_t``. A fresh ``z`` is drawn whenever
    ``(t - p) mod f == 0``.
    """

    def __init__(self, model, clips, kin: Cvae, tracker: Tracker, segments=SEGMENTS, record=False):
        check_compatible(kin, model)
        if not tracker.residual_targets:
            raise ConfigError("dual-policy control uses residual joint targets")
        self.model = model
        self.clips = clips
        self.kin = kin
        self.tracker = tracker
        self.segments = segments
        self.p = kin.config.past
        self.f = kin.config.future
        self.feats = clip_features(clips)
        self.vels = [c.velocities() for c in clips]
        self.seeds = [(ci, t) for ci, c in enumerate(clips) for t in range(self.p + 1, len(c) + 1)]
        if not self.seeds:
            raise ContractError("no clip is long enough to seed a past window")
        self.fall_height = dataset_fall_height(clips)
        self.record = record
        self.transitions = []
        self.z_draws = 0

    @property
    def obs_dim(self):
        return state_dim(self.model) + self.kin.dim + self.kin.z_dim

    @property
    def action_dim(self):
        return self.tracker.action_dim

    def reset(self, rng, frame=None):
        self.rng = rng
        ci, t0 = self.seeds[int(rng.integers(len(self.seeds)))] if frame is None else frame
        clip = self.clips[ci]
        p = self.p
        self.ref = ReferenceStream(self.model, self.kin, clip.frames[t0 - p:t0], self.feats[ci][t0 - p:t0], clip.fps)
        # x_{p-1} <- xhat_{p-1}
        self.state = HumanoidState(clip.frames[t0 - 1].copy(), self.vels[ci][t0 - 1].copy())
        self.t = p
        self.z_draws = 0
        self.transitions = []
        self._maybe_resample()
        return self.observe()

    def _maybe_resample(self):
        if (self.t - self.p) % self.f == 0:
            self.z = self.rng.standard_normal(self.kin.z_dim)
            self.z_draws += 1
            self.ref.extend(self.z)

    def observe(self, z=None):
        z = self.z if z is None else z
        return make_state_features(self.state, mode=DUAL, ref_features=self.ref.feats[self.t - 1], z=z)

    def step(self, action_vec):
        t = self.t
        s_t = self.observe() if self.record else None
        res = self.tracker.advance(self.state, action_vec, self.ref.world[t], self.ref.track[t], self.fall_height)
        self.state = res.state
        self.t = t + 1
        if self.t >= self.p + self.segments * self.f:
            res.done = True
        if self.record:
            # s_{t+1} uses the z of step t, as in the algorithm's storage line
            self.transitions.append((s_t, np.array(action_vec), res.reward, self.observe()))
        if not res.done:
            self._maybe_resample()
        return res


def make_dual_agent(model, kin, tracker, config: PpoConfig, seed=0):
    obs = state_dim(model) + kin.dim + kin.z_dim
    return Agent(obs, tracker.action_dim, config.hidden, config.policy_variance,
                 np.random.default_rng([seed, 7]), config.normalize_obs)


def train_dual_policy(kin: Cvae, clips, tracker: Tracker, config: PpoConfig, seed=0, workers=1,
                      epochs=None, log_path=None, checkpoint_path=None, parallel=False, agent=None):
    """PPO over dual-policy episodes; returns the trainer (agent, optimizer, epoch)."""
    model = tracker.model
    check_compatible(kin, model)
    envs = [DualEnv(model, clips, kin, tracker) for _ in range(workers)]
    agent = make_dual_agent(model, kin, tracker, config, seed) if agent is None else agent
    trainer = PpoTrainer(agent, envs, config, seed, parallel)
    if epochs is not None:
        trainer.train(epochs, log_path, checkpoint_path)
    return trainer


# -- synthesis ---------------------------------------------------------------

@dataclass
class SynthesisResult:
    frames: np.ndarray  # simulated, one row per policy step
    reference: np.ndarray
    z_draws: int
    falls: list = field(default_factory=list)  # steps at which the root dropped below threshold
    divergences: list = field(default_factory=list)
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_clip(self, model, fps, name="synthesis"):
        return MotionClip(self.frames, fps, name=name, model=model.name, model_hash=model.hash,
                          meta={"falls": self.falls, "z_draws": self.z_draws})


def synthesize(kin: Cvae, agent: Agent, tracker: Tracker, seed_clip, seed_t, horizon_steps, rng,
               fall_height=None, condition="generated"):
    """Forecast with ``kin`` and track with the mean action, for ``horizon_steps`` steps.

    Never terminates: falls below ``fall_height`` are logged (one event per
    crossing) and a diverged simulation restarts from the current reference frame.
    ``condition="simulated"`` feeds the forecaster the simulated past instead of
    the generated reference.
    """
    model = tracker.model
    check_compatible(kin, model)
    if condition not in ("generated", "simulated"):
        raise ContractError(f"unknown conditioning {condition!r}")
    p, f = kin.config.past, kin.config.future
    feats = clip_features([seed_clip])[0]
    vel = seed_clip.velocities()
    if not p + 1 <= seed_t <= len(seed_clip):
        raise ContractError("seed frame must leave a full past window")
    if fall_height is None:
        fall_height = float(seed_clip.frames[:, 1].min()) - FALL_MARGIN
    ref = ReferenceStream(model, kin, seed_clip.frames[seed_t - p:seed_t], feats[seed_t - p:seed_t], seed_clip.fps)
    state = HumanoidState(seed_clip.frames[seed_t - 1].copy(), vel[seed_t - 1].copy())
    sim = [state.q.copy() for _ in range(p)]
    out, rewards, falls, divs = [], [], [], []
    fallen = False
    z = None
    draws = 0
    for k in range(int(horizon_steps)):
        t = p + k
        if k % f == 0:
            z = rng.standard_normal(kin.z_dim)
            draws += 1
            if condition == "simulated":
                ref.feats[-p:] = list(frames_to_features(np.array(sim[-p - 1:]), seed_clip.fps)[1:])
            ref.extend(z)
        obs = make_state_features(state, mode=DUAL, ref_features=ref.feats[t - 1], z=z)
        a, _, _, _ = agent.act(obs, deterministic=True)
        res = tracker.advance(state, a, ref.world[t], ref.track[t], fall_height)
        if res.diverged:
            divs.append(k)
            state = HumanoidState(ref.world[t].copy(), np.zeros(model.dof_count))
        else:
            state = res.state
        low = bool(state.q[1] < fall_height)
        if low and not fallen:
            falls.append(k)
        fallen = low
        out.append(state.q.copy())
        sim.append(state.q.copy())
        rewards.append(res.reward)
    nq = model.nq
    return SynthesisResult(np.array(out).reshape(-1, nq), np.array(ref.world[p:p + len(out)]).reshape(-1, nq),
                           draws, falls, divs, np.array(rewards))


# -- evaluation --------------------------------------------------------------

def pose_vector(frames):
    """``[root height, root Euler xyz, q_nr]`` per frame."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    return np.concatenate([frames[:, 1:2], quat.to_euler_xyz(frames[:, 3:7]), frames[:, 7:]], 1)


def angle_errors(pred, truth):
    """Per-frame Euclidean distance between pose vectors (root Euler differences wrapped)."""
    d = np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)
    d[:, 1:4] = (d[:, 1:4] + np.pi) % (2 * np.pi) - np.pi
    return np.linalg.norm(d, axis=1)


def mae_fae(pred_vectors, truth_vectors):
    e = angle_errors(pred_vectors, truth_vectors)
    return float(e.mean()), float(e[-1])


def forecast_and_track(kin, agent, tracker, clip, feats, vel, t, z, fall_height):
    """Simulated frames ``t .. t+f-1`` tracking one decoded future from the true past."""
    model = tracker.model
    p = kin.config.past
    ref = ReferenceStream(model, kin, clip.frames[t - p:t], feats[t - p:t], clip.fps)
    ref.extend(z)
    state = HumanoidState(clip.frames[t - 1].copy(), vel[t - 1].copy())
    out = []
    for k in range(kin.config.future):
        obs = make_state_features(state, mode=DUAL, ref_features=ref.feats[p + k - 1], z=z)
        a, _, _, _ = agent.act(obs, deterministic=True)
        res = tracker.advance(state, a, ref.world[p + k], ref.track[p + k], fall_height)
        state = res.state
        out.append(state.q.copy())
    return np.array(out)


def evaluate_mae_fae(kin, agent, tracker, test_clips, samples=10, rng=None, stride=None, csv_path=None):
    """Mean/final angle errors over held-out windows, averaged over ``samples`` z draws."""
    rng = np.random.default_rng(0) if rng is None else rng
    p, f = kin.config.past, kin.config.future
    stride = f if stride is None else stride
    fall_height = dataset_fall_height(test_clips)
    rows = []
    for ci, clip in enumerate(test_clips):
        if len(clip) < p + 1 + f:
            raise ContractError(f"clip {clip.name!r} too short for {p} past + {f} future frames")
        feats = clip_features([clip])[0]
        vel = clip.velocities()
        truth_all = pose_vector(clip.frames)
        for w, t in enumerate(range(p + 1, len(clip) - f + 1, stride)):
            for s in range(samples):
                z = rng.standard_normal(kin.z_dim)
                sim = forecast_and_track(kin, agent, tracker, clip, feats, vel, t, z, fall_height)
                mae, fae = mae_fae(pose_vector(sim), truth_all[t:t + f])
                rows.append((clip.name, w, s, mae, fae))
    if not rows:
        raise ContractError("no evaluation windows")
    mae = float(np.mean([r[3] for r in rows]))
    fae = float(np.mean([r[4] for r in rows]))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["clip", "window", "sample", "mae", "fae"])
            for r in rows:
                wr.writerow([r[0], r[1], r[2], repr(r[3]), repr(r[4])])
            wr.writerow(["ALL", "", "", repr(mae), repr(fae)])
    return mae, fae, rows
