"""Synthetic reference clips standing in for mocap at desk scale."""

from __future__ import annotations

import numpy as np

from . import quat
from .clips import FRAME_RATE, MotionClip
from .dynamics import DEFAULT_CONTACT
from .errors import ContractError
from .model import link_frames

KINDS = ("hover", "pendulum-swing", "planar-hop", "spin", "bimodal-turn", "cyclic-walk")
HOVER_LIFT = 0.5
_Z = (0.0, 0.0, 1.0)


def lowest_point(model, q):
    """Minimum world height over all contact samples (sphere surfaces included)."""
    a = model.arrays
    if len(a.cp_link) == 0:
        R, p, _, _ = link_frames(model, q)
        return float(p[:, 1].min())
    R, p, _, _ = link_frames(model, q)
    ys = p[a.cp_link, 1] + np.einsum("kj,kj->k", R[a.cp_link, 1, :], a.cp_local) - a.cp_radius
    return float(ys.min())


def standing_height(model, q_nr=None, params=DEFAULT_CONTACT):
    """Root height that rests the pose on the ground, including static spring sinkage."""
    q = model.rest_q(0.0)
    if q_nr is not None:
        q[7:] = q_nr
    a = model.arrays
    low = lowest_point(model, q)
    if len(a.cp_link):
        R, p, _, _ = link_frames(model, q)
        ys = p[a.cp_link, 1] + np.einsum("kj,kj->k", R[a.cp_link, 1, :], a.cp_local) - a.cp_radius
        n_low = int(np.sum(ys < low + 1e-6))
    else:
        n_low = 1
    sink = model.total_mass * abs(model.gravity[1]) / (params.stiffness * n_low)
    return -low - sink


def _z_dofs(model):
    """Non-root DoF indices of z-axis hinges, split into first-level and deeper bodies."""
    top, deep = [], []
    for bi, b in enumerate(model.bodies):
        if b.parent < 0:
            continue
        sl = model.body_dofs[bi]
        for k, ax in enumerate(b.axes):
            if np.allclose(ax, _Z):
                (top if b.parent == 0 else deep).append((bi, sl.start + k))
    return top, deep


def _legs(model):
    """(hip_z, knee_z) DoF pairs for each root child that has a z-hinged child."""
    top, deep = _z_dofs(model)
    legs = []
    for bi, d in top:
        knees = [dd for bj, dd in deep if model.bodies[bj].parent == bi]
        if knees:
            legs.append((d, knees[0]))
    return legs


def _frames_count(duration, fps):
    n = int(round(duration * fps))
    if n < 2:
        raise ContractError("duration too short for a clip")
    return n


def _clip(model, frames, kind, fps, **meta):
    return MotionClip(np.asarray(frames), fps, name=kind, model=model.name, model_hash=model.hash,
                      meta={"kind": kind, **meta})


def hover(model, duration=4.0, fps=FRAME_RATE, lift=HOVER_LIFT):
    """Static rest pose held ``lift`` above its standing height; nothing supports it."""
    n = _frames_count(duration, fps)
    q = model.rest_q(standing_height(model) + lift)
    return _clip(model, np.tile(q, (n, 1)), "hover", fps, lift=lift)


def pendulum_swing(model, duration=4.0, fps=FRAME_RATE, amplitude=0.6, period=2.0):
    """Root held in the air, every hinge swinging sinusoidally; periodic over the clip."""
    if model.actuated_dof_count == 0:
        raise ContractError("pendulum-swing needs at least one hinge")
    n = _frames_count(duration, fps)
    cycles = max(1, int(round(duration / period)))
    T = n  # frames 0..T, last equals first
    t = np.arange(T + 1)
    phase = 2.0 * np.pi * cycles * t / T
    q0 = model.rest_q(standing_height(model) + HOVER_LIFT)
    frames = np.tile(q0, (T + 1, 1))
    scale = amplitude / np.arange(1, model.actuated_dof_count + 1)
    frames[:, 7:] = np.sin(phase)[:, None] * scale[None, :]
    return _clip(model, frames, "pendulum-swing", fps, cycles=cycles)


def planar_hop(model, duration=4.0, fps=FRAME_RATE, period=1.0, lift=0.12, crouch=0.35):
    """Vertical hops: crouch while grounded, smooth ballistic-like lift in flight."""
    legs = _legs(model)
    if not legs:
        raise ContractError(f"planar-hop needs a z-hinged leg (model {model.name!r})")
    n = _frames_count(duration, fps)
    frames = []
    for k in range(n):
        s = np.sin(2.0 * np.pi * k / (fps * period))
        a = crouch * max(0.0, -s) ** 2
        q = model.rest_q(0.0)
        for hip, knee in legs:
            q[7 + hip] = a
            q[7 + knee] = -2.0 * a
        q[1] = standing_height(model, q[7:]) + lift * max(0.0, s) ** 2
        frames.append(q)
    return _clip(model, frames, "planar-hop", fps, period=period)


def spin(model, duration=4.0, fps=FRAME_RATE, rate=np.pi / 2):
    """Standing pose turning about the vertical axis at ``rate`` rad/s."""
    n = _frames_count(duration, fps)
    h = standing_height(model)
    frames = np.tile(model.rest_q(h), (n, 1))
    frames[:, 3:7] = quat.from_yaw(rate * np.arange(n) / fps)
    return _clip(model, frames, "spin", fps, rate=rate)


def _gait(model, n, fps, speed, stride, yaw_fn, start=(0.0, 0.0), phase0=0.0):
    """Two-leg walking cycle with heading ``yaw_fn(k)`` and forward speed along it."""
    legs = _legs(model)
    if len(legs) < 2:
        raise ContractError(f"walking motions need two z-hinged legs (model {model.name!r})")
    freq = speed / stride
    frames = []
    x, z = start
    for k in range(n):
        ph = 2.0 * np.pi * freq * k / fps + phase0
        q = model.rest_q(0.0)
        for j, (hip, knee) in enumerate(legs[:2]):
            s = np.sin(ph + np.pi * j)
            q[7 + hip] = 0.3 * s
            q[7 + knee] = -0.5 * max(0.0, np.cos(ph + np.pi * j)) ** 2
        yaw = yaw_fn(k)
        q[3:7] = quat.from_yaw(yaw)
        q[1] = standing_height(model, q[7:])
        q[0], q[2] = x, z
        # forward axis is body +x; heading yaw rotates it about +y
        x += speed / fps * np.cos(yaw)
        z -= speed / fps * np.sin(yaw)
        frames.append(q)
    return np.array(frames)


def cyclic_walk(model, duration=6.0, fps=FRAME_RATE, speed=0.6, stride=0.6, phase0=0.0):
    n = _frames_count(duration, fps)
    frames = _gait(model, n, fps, speed, stride, lambda k: 0.0, phase0=phase0)
    return _clip(model, frames, "cyclic-walk", fps, speed=speed, phase0=phase0)


def bimodal_turn(model, direction=1, duration=3.2, fps=FRAME_RATE, straight=1.0, turn_rate=1.0,
                 speed=0.6, stride=0.6, phase0=0.0):
    """Walk straight for ``straight`` seconds, then turn left (+1) or right (-1)."""
    if direction not in (1, -1):
        raise ContractError("direction must be +1 (left) or -1 (right)")
    n = _frames_count(duration, fps)
    k0 = straight * fps
    yaw = lambda k: direction * turn_rate * max(0.0, k - k0) / fps
    frames = _gait(model, n, fps, speed, stride, yaw, phase0=phase0)
    return _clip(model, frames, "bimodal-turn", fps, direction=direction, phase0=phase0)


def generate_synthetic_clip(kind, model, duration=None, **kw):
    fns = {"hover": hover, "pendulum-swing": pendulum_swing, "planar-hop": planar_hop, "spin": spin,
           "bimodal-turn": bimodal_turn, "cyclic-walk": cyclic_walk}
    if kind not in fns:
        raise ContractError(f"unknown clip kind {kind!r}; choose from {', '.join(KINDS)}")
    if duration is not None:
        kw["duration"] = duration
    return fns[kind](model, **kw)


def bimodal_turn_dataset(model, pairs=8, rng=None, duration=3.2):
    """Equal numbers of left and right turns with jittered gait phase and turn rate."""
    rng = np.random.default_rng(0) if rng is None else rng
    clips = []
    for i in range(pairs):
        ph = float(rng.uniform(0, 2 * np.pi))
        rate = float(rng.uniform(0.8, 1.2))
        for d in (1, -1):
            c = bimodal_turn(model, d, duration, phase0=ph, turn_rate=rate)
            c.name = f"turn{'L' if d > 0 else 'R'}{i:02d}"
            clips.append(c)
    return clips


def cyclic_walk_dataset(model, count=6, rng=None, duration=6.0):
    rng = np.random.default_rng(0) if rng is None else rng
    clips = []
    for i in range(count):
        c = cyclic_walk(model, duration, speed=float(rng.uniform(0.5, 0.7)),
                        phase0=float(rng.uniform(0, 2 * np.pi)))
        c.name = f"walk{i:02d}"
        clips.append(c)
    return clips
