"""PD actuation, composite actions and corrective-force scaling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ResidualForceSet, RootWrench
from .errors import ContractError

PLAIN = "plain"
RFC_EXPLICIT = "rfc_explicit"
RFC_IMPLICIT = "rfc_implicit"
MODES = (PLAIN, RFC_EXPLICIT, RFC_IMPLICIT)

FORCE_SCALE = 100.0


def _clamp(tau, limits):
    return np.clip(tau, -limits, limits)


def pd_torques(model, u, q_nr, qdot_nr):
    """kp*(u - q) - kd*q', clamped to the torque limits."""
    u, q_nr, qdot_nr = (np.asarray(v, dtype=float) for v in (u, q_nr, qdot_nr))
    n = model.actuated_dof_count
    if u.shape != (n,) or q_nr.shape != (n,) or qdot_nr.shape != (n,):
        raise ContractError(f"PD inputs must have {n} entries")
    return _clamp(model.kp * (u - q_nr) - model.kd * qdot_nr, model.torque_limits)


def stable_pd_torques(model, u, q_nr, qdot_nr, h):
    """Velocity look-ahead PD: the position error is taken one substep ahead.

    The simulator's stable mode additionally treats the damping term implicitly
    inside the acceleration solve (see :func:`rfcmotion.dynamics.step_pd`).
    """
    if h < 0:
        raise ContractError("h must be nonnegative")
    u, q_nr, qdot_nr = (np.asarray(v, dtype=float) for v in (u, q_nr, qdot_nr))
    n = model.actuated_dof_count
    if u.shape != (n,) or q_nr.shape != (n,) or qdot_nr.shape != (n,):
        raise ContractError(f"PD inputs must have {n} entries")
    tau = model.kp * (u - q_nr - h * qdot_nr) - model.kd * qdot_nr
    return _clamp(tau, model.torque_limits)


def compose_target(q_ref_nr, delta_u):
    """u = q_ref + delta_u (residual joint targets)."""
    q_ref_nr = np.asarray(q_ref_nr, dtype=float)
    delta_u = np.asarray(delta_u, dtype=float)
    if q_ref_nr.shape != delta_u.shape:
        raise ContractError("reference angles and residual angles differ in shape")
    return q_ref_nr + delta_u


@dataclass
class CompositeAction:
    """Humanoid action (absolute or residual targets) plus the raw corrective action."""

    mode: str
    u: np.ndarray
    corrective: ResidualForceSet | RootWrench | None = None
    residual: bool = False  # u holds delta_u, to be added to reference angles

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown controller mode {self.mode!r}")
        self.u = np.asarray(self.u, dtype=float)
        expected = {PLAIN: type(None), RFC_EXPLICIT: ResidualForceSet, RFC_IMPLICIT: RootWrench}[self.mode]
        if not isinstance(self.corrective, expected):
            raise ContractError(f"mode {self.mode} needs a corrective of type {expected.__name__}")

    def target(self, q_ref_nr=None):
        if not self.residual:
            return self.u
        if q_ref_nr is None:
            raise ContractError("residual targets need reference angles")
        return compose_target(q_ref_nr, self.u)


def corrective_dim(model, mode):
    if mode == PLAIN:
        return 0
    if mode == RFC_IMPLICIT:
        return 6
    if mode == RFC_EXPLICIT:
        return 9 * len(model.rfc_bodies)
    raise ContractError(f"unknown controller mode {mode!r}")


def action_dim(model, mode):
    return model.actuated_dof_count + corrective_dim(model, mode)


def split_action(model, mode, vec, residual=False) -> CompositeAction:
    """Unpack a flat policy output ``[u, corrective]`` into a :class:`CompositeAction`.

    Explicit layout per RFC body: 6 wrench entries, then after all wrenches the
    M contact points (3 each).
    """
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (action_dim(model, mode),):
        raise ContractError(f"action vector must have {action_dim(model, mode)} entries")
    n = model.actuated_dof_count
    u, rest = vec[:n], vec[n:]
    if mode == PLAIN:
        corr = None
    elif mode == RFC_IMPLICIT:
        corr = RootWrench(rest)
    else:
        M = len(model.rfc_bodies)
        corr = ResidualForceSet(rest[:6 * M].reshape(M, 6), rest[6 * M:].reshape(M, 3))
    return CompositeAction(mode, u, corr, residual)


def scale_corrective(action: CompositeAction):
    """Physical corrective action: forces/torques times 100, contact points unchanged."""
    if action.mode == PLAIN:
        raise ContractError("plain actions carry no corrective force")
    c = action.corrective
    if isinstance(c, RootWrench):
        return RootWrench(FORCE_SCALE * c.eta)
    return ResidualForceSet(FORCE_SCALE * c.wrenches, c.points.copy())
