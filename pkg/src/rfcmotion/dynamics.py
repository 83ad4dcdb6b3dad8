"""Equations of motion with contact and residual forces, stepping and inverse dynamics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ContractError, IntegrationDivergedError
from .clips import finite_difference_accelerations, finite_difference_velocities
from .model import HumanoidModel, HumanoidState, _check_q, _check_qd, link_frames

SIM_HZ = 450
POLICY_HZ = 30
SUBSTEPS = SIM_HZ // POLICY_HZ
SUBSTEP_DT = 1.0 / SIM_HZ


@dataclass(frozen=True)
class ContactParams:
    stiffness: float = 2e4
    damping: float = 500.0
    friction: float = 0.8
    slip_eps: float = 1e-3
    enabled: bool = True

    def packed(self):
        return np.array([self.stiffness, self.damping, self.friction, self.slip_eps])


DEFAULT_CONTACT = ContactParams()


@dataclass
class ContactForce:
    body: int
    point: np.ndarray
    force: np.ndarray


@dataclass
class ResidualForceSet:
    """Explicit corrective action: per RFC body a local wrench and local contact point."""
    wrenches: np.ndarray  # (M, 6) force then torque, body frame
    points: np.ndarray  # (M, 3) body frame

    def __post_init__(self):
        self.wrenches = np.asarray(self.wrenches, dtype=float).reshape(-1, 6)
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.wrenches) != len(self.points):
            raise ContractError("one contact point per residual wrench")
        if not (np.all(np.isfinite(self.wrenches)) and np.all(np.isfinite(self.points))):
            raise ContractError("residual forces must be finite")


@dataclass
class RootWrench:
    """Implicit corrective action: generalized force on the six root DoFs."""
    eta: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).reshape(-1)
        if self.eta.shape != (6,) or not np.all(np.isfinite(self.eta)):
            raise ContractError("root wrench must be 6 finite numbers")


def _corrective_args(model, corrective):
    M = len(model.rfc_bodies)
    links = model.body_link[np.asarray(model.rfc_bodies, dtype=np.int64)].astype(np.int64)
    if corrective is None:
        return K.CORR_NONE, np.zeros(6), links, np.zeros((M, 6)), np.zeros((M, 3))
    if isinstance(corrective, RootWrench):
        return K.CORR_IMPLICIT, corrective.eta, links, np.zeros((M, 6)), np.zeros((M, 3))
    if isinstance(corrective, ResidualForceSet):
        if len(corrective.wrenches) != M:
            raise ContractError(f"expected {M} residual wrenches, got {len(corrective.wrenches)}")
        return K.CORR_EXPLICIT, np.zeros(6), links, corrective.wrenches, corrective.points
    raise ContractError(f"unsupported corrective action {type(corrective).__name__}")


def _state_arrays(model, state):
    q = np.asarray(state.q, dtype=float)
    qd = np.asarray(state.qdot, dtype=float)
    if q.shape != (model.nq,) or qd.shape != (model.dof_count,):
        raise ContractError("state dimensions do not match the model")
    return q, qd


def _contact_arrays(model, q, qd, params):
    a = model.arrays
    R, p, S, V = K.kinematics(q, qd, a.parent, a.axis, a.offset)
    ncp = len(a.cp_link)
    pts = np.zeros((ncp, 3))
    fs = np.zeros((ncp, 3))
    idx = np.zeros(ncp, dtype=np.int64)
    cnt = 0
    if params.enabled and ncp:
        cnt = K.contact_points(R, p, V, a.cp_link, a.cp_local, a.cp_radius,
                               params.stiffness, params.damping, params.friction, params.slip_eps,
                               pts, fs, idx)
    return pts[:cnt], fs[:cnt], idx[:cnt]


def _link_to_body(model):
    lookup = {}
    for b, li in enumerate(model.body_link):
        lookup[int(li)] = b
    return lookup


def mass_matrix(model: HumanoidModel, q) -> np.ndarray:
    """Joint-space inertia matrix B(q), armature on the hinge diagonal."""
    R, p, S, _ = link_frames(model, q)
    a = model.arrays
    return K.crba(R, p, S, a.parent, a.mass, a.com, a.inertia, a.armature)


def _fext_from_contacts(model, R, p, contacts):
    fext = np.zeros((len(model.arrays.parent), 6))
    for c in contacts or ():
        li = int(model.body_link[c.body])
        x = np.asarray(c.point, float)
        f = np.asarray(c.force, float)
        fext[li, :3] += np.cross(x, f)
        fext[li, 3:] += f
    return fext


def inverse_dynamics(model: HumanoidModel, q, qdot, qddot, contacts=None) -> np.ndarray:
    """Generalized force B q'' + c - sum J^T h for the given contact forces."""
    q = _check_q(model, q)
    qd = _check_qd(model, qdot)
    qdd = _check_qd(model, qddot)
    a = model.arrays
    R, p, S, V = K.kinematics(q, qd, a.parent, a.axis, a.offset)
    fext = _fext_from_contacts(model, R, p, contacts)
    return K.rnea(q, qd, qdd, R, p, S, V, a.parent, a.mass, a.com, a.inertia, a.armature, fext, a.gravity)


def bias_forces(model: HumanoidModel, q, qdot) -> np.ndarray:
    """C(q, q') q' + g(q)."""
    return inverse_dynamics(model, q, qdot, np.zeros(model.dof_count))


def contact_forces(model: HumanoidModel, state: HumanoidState, params: ContactParams = DEFAULT_CONTACT):
    """Penalty ground-contact forces for every penetrating contact sample."""
    q, qd = _state_arrays(model, state)
    pts, fs, idx = _contact_arrays(model, q, qd, params)
    a = model.arrays
    to_body = _link_to_body(model)
    return [ContactForce(to_body[int(a.cp_link[k])], pts[i].copy(), fs[i].copy()) for i, k in enumerate(idx)]


def generalized_corrective(model, q, corrective) -> np.ndarray:
    """Generalized force of a corrective action: sum J_e^T xi (explicit) or [eta_r; 0]."""
    n = model.dof_count
    out = np.zeros(n)
    if corrective is None:
        return out
    if isinstance(corrective, RootWrench):
        out[:6] = corrective.eta
        return out
    kind, _, links, xi, e = _corrective_args(model, corrective)
    a = model.arrays
    R, p, S, _ = K.kinematics(np.asarray(q, float), np.zeros(n), a.parent, a.axis, a.offset)
    for j, li in enumerate(links):
        x = p[li] + R[li] @ e[j]
        J = K.point_jacobian(R, p, S, a.parent, li, x)
        out += J[:3].T @ (R[li] @ xi[j, :3]) + J[3:].T @ (R[li] @ xi[j, 3:])
    return out


def forward_dynamics(model: HumanoidModel, state: HumanoidState, tau, corrective=None,
                     contacts=None) -> np.ndarray:
    """Solve B q'' = [0; tau] + sum J_v^T h + residual term - c for q''.

    ``contacts`` is a list of :class:`ContactForce`; pass ``"auto"`` to evaluate the
    penalty model at ``state``.
    """
    q, qd = _state_arrays(model, state)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (model.actuated_dof_count,):
        raise ContractError(f"tau must have {model.actuated_dof_count} entries")
    if isinstance(contacts, str) and contacts == "auto":
        contacts = contact_forces(model, state)
    a = model.arrays
    kind, eta, links, xi, e = _corrective_args(model, corrective)
    R, p, S, V = K.kinematics(q, qd, a.parent, a.axis, a.offset)
    fext = _fext_from_contacts(model, R, p, contacts)
    if kind == K.CORR_EXPLICIT:
        fext += K.external_forces(R, p, V, a.cp_link[:0], a.cp_local[:0], a.cp_radius[:0],
                                  DEFAULT_CONTACT.packed(), False, kind, links, xi, e)
    c = K.rnea(q, qd, np.zeros(model.dof_count), R, p, S, V, a.parent, a.mass, a.com, a.inertia,
               a.armature, fext, a.gravity)
    B = K.crba(R, p, S, a.parent, a.mass, a.com, a.inertia, a.armature)
    gen = np.zeros(model.dof_count)
    if kind == K.CORR_IMPLICIT:
        gen[:6] = eta
    gen[6:] = tau
    qdd = K.cholesky_solve(B, gen - c)
    if not np.all(np.isfinite(qdd)):
        raise FloatingPointError("mass matrix is not positive definite")
    return qdd


def _advance(model, state, act_kind, act, corrective, substeps, h, contact):
    q, qd = _state_arrays(model, state)
    act = np.asarray(act, dtype=float)
    if act.shape != (model.actuated_dof_count,):
        raise ContractError(f"actuation must have {model.actuated_dof_count} entries")
    if substeps < 1 or h <= 0:
        raise ContractError("substeps must be >= 1 and h > 0")
    a = model.arrays
    kind, eta, links, xi, e = _corrective_args(model, corrective)
    qn, qdn, ok = K.simulate(q, qd, act_kind, act, kind, eta, links, xi, e, int(substeps), float(h),
                             bool(contact.enabled), contact.packed(), a.parent, a.axis, a.offset,
                             a.mass, a.com, a.inertia, a.armature, a.kp, a.kd, a.tlim,
                             a.cp_link, a.cp_local, a.cp_radius, a.gravity)
    if not ok:
        raise IntegrationDivergedError("simulation state became non-finite")
    return HumanoidState(qn, qdn, state.time + substeps * h)


def step(model: HumanoidModel, state: HumanoidState, tau, corrective=None, substeps: int = SUBSTEPS,
         h: float = SUBSTEP_DT, contact: ContactParams = DEFAULT_CONTACT) -> HumanoidState:
    """Semi-implicit Euler with ``tau`` and ``corrective`` held over all substeps."""
    return _advance(model, state, K.ACT_TORQUE, tau, corrective, substeps, h, contact)


def step_pd(model: HumanoidModel, state: HumanoidState, target, corrective=None,
            substeps: int = SUBSTEPS, h: float = SUBSTEP_DT, stable: bool = True,
            contact: ContactParams = DEFAULT_CONTACT) -> HumanoidState:
    """Like :func:`step` but PD torques toward ``target`` are recomputed every substep.

    With ``stable`` the PD law uses the velocity look-ahead form and its damping is
    folded implicitly into the acceleration solve.
    """
    kind = K.ACT_SPD if stable else K.ACT_PD
    return _advance(model, state, kind, target, corrective, substeps, h, contact)


def kinetic_energy(model, state):
    B = mass_matrix(model, state.q)
    return 0.5 * float(state.qdot @ B @ state.qdot)


def potential_energy(model, q):
    R, p, _, _ = link_frames(model, q)
    a = model.arrays
    coms = p + np.einsum("lij,lj->li", R, a.com)
    return -float((a.mass[:, None] * coms * a.gravity).sum())


def root_holding_wrench(model, state, tau, contacts=None):
    """Root wrench that makes the root acceleration exactly zero."""
    q, qd = _state_arrays(model, state)
    B = mass_matrix(model, q)
    c = inverse_dynamics(model, q, qd, np.zeros(model.dof_count), contacts)
    qdd_nr = np.linalg.solve(B[6:, 6:], np.asarray(tau, float) - c[6:])
    return B[:6, 6:] @ qdd_nr + c[:6]


# -- clip analysis ---------------------------------------------------------

def clip_derivatives(clip):
    """Central-difference velocities and accelerations of a clip (no smoothing)."""
    return finite_difference_velocities(clip.frames, clip.dt), finite_difference_accelerations(clip.frames, clip.dt)


def required_root_wrench(model: HumanoidModel, clip, contacts_per_frame="auto",
                         params: ContactParams = DEFAULT_CONTACT):
    """Per-frame root wrench the clip demands; returns ``(wrenches (T, 6), contact counts)``.

    ``contacts_per_frame`` is a list of contact lists, ``None`` for no support, or
    ``"auto"`` to evaluate the penalty contact model at each frame.
    """
    frames = np.asarray(clip.frames, dtype=float)
    if len(frames) < 3:
        raise ContractError("clip needs at least 3 frames")
    vel, acc = clip_derivatives(clip)
    out = np.zeros((len(frames), 6))
    counts = np.zeros(len(frames), dtype=int)
    for t in range(len(frames)):
        if contacts_per_frame is None:
            contacts = []
        elif isinstance(contacts_per_frame, str):
            contacts = contact_forces(model, HumanoidState(frames[t], vel[t]), params)
        else:
            contacts = contacts_per_frame[t]
        counts[t] = len(contacts)
        out[t] = inverse_dynamics(model, frames[t], vel[t], acc[t], contacts)[:6]
    return out, counts


def write_wrench_csv(path, wrenches, counts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "fx", "fy", "fz", "tx", "ty", "tz", "contact_count"])
        for t, (row, c) in enumerate(zip(wrenches, counts)):
            w.writerow([t, *(f"{v:.9g}" for v in row), int(c)])
