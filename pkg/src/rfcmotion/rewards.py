"""Imitation rewards (world and heading-local), corrective-force regularizers."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from . import quat
from .dynamics import ResidualForceSet, RootWrench
from .errors import ContractError
from .model import _check_q, _check_qd

WORLD = "world"
LOCAL = "local"


@dataclass(frozen=True)
class RewardConfig:
    kind: str = WORLD
    # world: pose, velocity, end effector, center of mass
    w_world: tuple = (0.3, 0.1, 0.5, 0.1)
    a_world: tuple = (2.0, 0.005, 5.0, 100.0)
    # local: pose, end effector, root pose, root velocity
    w_local: tuple = (0.5, 0.3, 0.1, 0.1)
    a_local: tuple = (2.0, 20.0, 300.0, 0.1)
    w_reg: float = 0.1
    k_f: float = 1.0
    k_cp: float = 4.0
    k_r: float = 1.0

    def __post_init__(self):
        if self.kind not in (WORLD, LOCAL):
            raise ContractError(f"unknown reward kind {self.kind!r}")
        for name in ("w_world", "w_local"):
            w = getattr(self, name)
            if len(w) != 4 or abs(sum(w) - 1.0) > 1e-12:
                raise ContractError(f"{name} must hold 4 weights summing to 1")
        for name in ("a_world", "a_local"):
            if len(getattr(self, name)) != 4 or min(getattr(self, name)) <= 0:
                raise ContractError(f"{name} must hold 4 positive scales")
        if min(self.k_f, self.k_cp, self.k_r) < 0 or self.w_reg < 0:
            raise ContractError("regularizer coefficients must be nonnegative")

    def to_dict(self):
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc):
        doc = {k: (tuple(v) if isinstance(v, list) else v) for k, v in doc.items()}
        return cls(**doc)


def quat_diff_angle(b1, b2):
    """Rotation angle in [0, pi] of the relative rotation between ``b1`` and ``b2``."""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    for b in (b1, b2):
        if np.any(np.abs(np.linalg.norm(b, axis=-1) - 1.0) > 1e-6):
            raise ContractError("quaternions must have unit norm")
    return quat.angle(quat.mul(b1, quat.conj(b2)))


class TrackingFeatures(NamedTuple):
    joint_quats: np.ndarray  # (J, 4) local joint rotations
    qdot: np.ndarray
    ee_world: np.ndarray  # (E, 3)
    ee_local: np.ndarray  # (E, 3) heading frame
    com: np.ndarray
    root_height: float
    root_quat_local: np.ndarray  # heading removed
    root_lin_local: np.ndarray
    root_ang_local: np.ndarray


def tracking_features(model, q, qdot) -> TrackingFeatures:
    q = _check_q(model, q)
    qdot = _check_qd(model, qdot)
    a = model.arrays
    jq, ee, ee_loc, com, root_loc, lin, ang = K.tracking(q, qdot, a.parent, a.axis, a.offset, a.mass, a.com,
                                                         *model.tracking_arrays)
    return TrackingFeatures(jq, qdot, ee, ee_loc, com, float(q[1]), root_loc, lin, ang)


def _features(model, state_or_feat):
    if isinstance(state_or_feat, TrackingFeatures):
        return state_or_feat
    return tracking_features(model, state_or_feat.q, state_or_feat.qdot)


def _pose_error(f, g):
    if len(f.joint_quats) == 0:
        return 0.0
    return K.pose_error(f.joint_quats, g.joint_quats)


def world_reward(state, ref_state, model, config: RewardConfig = RewardConfig()):
    """Returns ``(r_world, (r_p, r_v, r_e, r_c))``. States may be precomputed features."""
    f = _features(model, state)
    g = _features(model, ref_state)
    ap, av, ae, ac = config.a_world
    r_p = np.exp(-ap * _pose_error(f, g))
    r_v = np.exp(-av * K.sqdist(f.qdot, g.qdot))
    r_e = np.exp(-ae * K.sqdist(f.ee_world, g.ee_world))
    r_c = np.exp(-ac * K.sqdist(f.com, g.com))
    subs = (float(r_p), float(r_v), float(r_e), float(r_c))
    return float(np.dot(config.w_world, subs)), subs


def local_reward(state, ref_state, model, config: RewardConfig = RewardConfig()):
    """Returns ``(r_local, (r_p, r_e, r_rp, r_rv))`` computed in each state's heading frame."""
    f = _features(model, state)
    g = _features(model, ref_state)
    ap, ae, arp, arv = config.a_local
    r_p = np.exp(-ap * _pose_error(f, g))
    r_e = np.exp(-ae * K.sqdist(f.ee_local, g.ee_local))
    o_err = K.quat_err(f.root_quat_local, g.root_quat_local)
    r_rp = np.exp(-arp * ((f.root_height - g.root_height) ** 2 + o_err ** 2))
    r_rv = np.exp(-K.sqdist(f.root_lin_local, g.root_lin_local)
                  - arv * K.sqdist(f.root_ang_local, g.root_ang_local))
    subs = (float(r_p), float(r_e), float(r_rp), float(r_rv))
    return float(np.dot(config.w_local, subs)), subs


def imitation_reward(state, ref_state, model, config: RewardConfig = RewardConfig()):
    if config.kind == WORLD:
        return world_reward(state, ref_state, model, config)
    return local_reward(state, ref_state, model, config)


def reg_reward(corrective, config: RewardConfig = RewardConfig()):
    """Regularizer on an already scaled corrective action."""
    if isinstance(corrective, RootWrench):
        return float(np.exp(-config.k_r * float(corrective.eta @ corrective.eta)))
    if isinstance(corrective, ResidualForceSet):
        s = config.k_f * np.sum(corrective.wrenches ** 2) + config.k_cp * np.sum(corrective.points ** 2)
        return float(np.exp(-s))
    raise ContractError("regularizer needs a RootWrench or ResidualForceSet")


def total_reward(r_im, r_reg, config: RewardConfig = RewardConfig()):
    """r_im + w_reg * r_reg; pass ``r_reg=None`` for plain (no corrective) control."""
    if r_reg is None:
        return float(r_im)
    return float(r_im + config.w_reg * r_reg)
