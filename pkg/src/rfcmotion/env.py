"""Imitation environment: reset from reference frames, PD stepping, rewards, termination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import control, quat
from .dynamics import DEFAULT_CONTACT, SUBSTEP_DT, SUBSTEPS, step_pd
from .errors import ContractError, IntegrationDivergedError
from .model import HumanoidState
from .rewards import RewardConfig, imitation_reward, reg_reward, total_reward, tracking_features

FALL_MARGIN = 0.1

IMITATION = "imitation"
DUAL = "dual"


def state_dim(model):
    """Humanoid part of the features: height, tilt (3), root lin/ang velocity (6), q_nr, qdot_nr."""
    return 10 + 2 * model.actuated_dof_count


def feature_dim(model, mode=IMITATION, phase=True, ref_dim=0, z_dim=0):
    d = state_dim(model)
    if mode == IMITATION:
        return d + (1 if phase else 0)
    return d + ref_dim + z_dim


def humanoid_features(q, qdot):
    """Heading- and translation-invariant description of a humanoid state."""
    return K.state_features(np.asarray(q, dtype=float), np.asarray(qdot, dtype=float))


def make_state_features(x: HumanoidState, clip=None, t=0, mode=IMITATION, phase=True,
                        ref_features=None, z=None):
    """Policy input for state ``x`` at reference frame ``t``.

    Imitation mode appends the motion phase ``t / T``; dual mode appends the
    reference pose features and the latent code.
    """
    f = humanoid_features(x.q, x.qdot)
    if mode == IMITATION:
        if not phase:
            return f
        if clip is None:
            raise ContractError("phase feature needs the reference clip")
        T = len(clip)
        if not 0 <= t < T:
            raise ContractError(f"frame {t} outside clip of {T} frames")
        return np.concatenate([f, [t / T]])
    if mode == DUAL:
        parts = [f]
        if ref_features is not None:
            parts.append(np.asarray(ref_features, dtype=float))
        if z is not None:
            parts.append(np.asarray(z, dtype=float))
        return np.concatenate(parts)
    raise ContractError(f"unknown feature mode {mode!r}")


@dataclass
class StepResult:
    state: HumanoidState
    r_im: float
    r_reg: float | None
    reward: float
    done: bool
    fell: bool = False
    diverged: bool = False


class Tracker:
    """Physics side shared by imitation and dual-policy episodes."""

    def __init__(self, model, ctrl_mode=control.PLAIN, reward=RewardConfig(), stable_pd=True,
                 residual_targets=False, contact=DEFAULT_CONTACT, substeps=SUBSTEPS, h=SUBSTEP_DT):
        if ctrl_mode not in control.MODES:
            raise ContractError(f"unknown controller mode {ctrl_mode!r}")
        self.model = model
        self.ctrl_mode = ctrl_mode
        self.reward = reward
        self.stable_pd = stable_pd
        self.residual_targets = residual_targets
        self.contact = contact
        self.substeps = substeps
        self.h = h

    @property
    def action_dim(self):
        return control.action_dim(self.model, self.ctrl_mode)

    def advance(self, state, action_vec, ref_q, ref_feat, fall_height):
        """Apply one policy action; reward against the reference ``(ref_q, ref_feat)``."""
        act = control.split_action(self.model, self.ctrl_mode, action_vec, self.residual_targets)
        u = act.target(ref_q[7:])
        corr = None if act.mode == control.PLAIN else control.scale_corrective(act)
        try:
            nxt = step_pd(self.model, state, u, corr, self.substeps, self.h, self.stable_pd, self.contact)
        except IntegrationDivergedError:
            return StepResult(state, 0.0, None if corr is None else 0.0, 0.0, True, diverged=True)
        r_im, _ = imitation_reward(tracking_features(self.model, nxt.q, nxt.qdot), ref_feat, self.model,
                                   self.reward)
        r_reg = None if corr is None else reg_reward(corr, self.reward)
        fell = bool(nxt.q[1] < fall_height)
        return StepResult(nxt, r_im, r_reg, total_reward(r_im, r_reg, self.reward), fell, fell)


class ImitationEnv:
    """Episode over one reference clip.

    Episodes start at a uniformly random frame with the humanoid set to that
    frame's state and end at the last frame, after ``horizon`` steps, or when the
    root drops more than 0.1 m below the clip's lowest root height.
    """

    def __init__(self, model, clip, tracker: Tracker, phase=True, horizon=None):
        clip.check_model(model)
        if len(clip) < 2:
            raise ContractError("clip needs at least 2 frames")
        self.model = model
        self.clip = clip
        self.tracker = tracker
        self.phase = phase
        self.horizon = horizon
        self.ref_q = clip.frames
        self.ref_qd = clip.velocities()
        self.ref_feat = [tracking_features(model, q, qd) for q, qd in zip(self.ref_q, self.ref_qd)]
        self.fall_height = float(self.ref_q[:, 1].min()) - FALL_MARGIN
        self.state = None
        self.t = 0
        self.steps = 0

    @property
    def obs_dim(self):
        return feature_dim(self.model, IMITATION, self.phase)

    @property
    def action_dim(self):
        return self.tracker.action_dim

    def reference_state(self, t):
        return HumanoidState(self.ref_q[t].copy(), self.ref_qd[t].copy(), t * self.clip.dt)

    def reset(self, rng=None, frame=None):
        T = len(self.clip)
        if frame is None:
            frame = int(rng.integers(0, T - 1))
        if not 0 <= frame < T - 1:
            raise ContractError(f"start frame {frame} must leave at least one step")
        self.t = frame
        self.steps = 0
        self.state = self.reference_state(frame)
        return self.observe()

    def observe(self):
        return make_state_features(self.state, self.clip, self.t, IMITATION, self.phase)

    def step(self, action_vec):
        t1 = self.t + 1
        res = self.tracker.advance(self.state, action_vec, self.ref_q[t1], self.ref_feat[t1], self.fall_height)
        self.state = res.state
        self.t = t1
        self.steps += 1
        if t1 >= len(self.clip) - 1 or (self.horizon is not None and self.steps >= self.horizon):
            res.done = True
        return res
