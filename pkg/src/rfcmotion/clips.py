"""Reference motion clips: storage, finite differences and synthetic generators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .errors import ContractError

CLIP_FORMAT = "rfcmotion.clip/1"
FRAME_RATE = 30.0


@dataclass
class MotionClip:
    frames: np.ndarray  # (T, nq)
    fps: float = FRAME_RATE
    qdot: np.ndarray | None = None
    name: str = "clip"
    model: str = ""
    model_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2:
            raise ContractError("frames must be a (T, nq) array")
        if not self.fps > 0:
            raise ContractError("frame rate must be positive")
        if self.qdot is not None:
            self.qdot = np.asarray(self.qdot, dtype=float)
            if len(self.qdot) != len(self.frames):
                raise ContractError("qdot needs one row per frame")

    @property
    def dt(self):
        return 1.0 / self.fps

    def __len__(self):
        return len(self.frames)

    def velocities(self):
        if self.qdot is not None:
            return self.qdot
        return finite_difference_velocities(self.frames, self.dt)

    def check_model(self, model):
        if self.frames.shape[1] != model.nq:
            raise ContractError(f"clip frames have {self.frames.shape[1]} coords, model needs {model.nq}")

    def to_dict(self):
        doc = {
            "format": CLIP_FORMAT, "name": self.name, "fps": self.fps,
            "model": self.model, "model_hash": self.model_hash, "meta": self.meta,
            "frames": self.frames.tolist(),
        }
        if self.qdot is not None:
            doc["qdot"] = self.qdot.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CLIP_FORMAT:
            raise ContractError(f"unsupported clip format {doc.get('format')!r}")
        return cls(np.array(doc["frames"], dtype=float), float(doc["fps"]),
                   None if "qdot" not in doc else np.array(doc["qdot"], dtype=float),
                   doc.get("name", "clip"), doc.get("model", ""), doc.get("model_hash", ""),
                   doc.get("meta", {}))


def save_clip(clip: MotionClip, path):
    # repr round-trips float64 exactly
    Path(path).write_text(json.dumps(clip.to_dict()))


def load_clip(path) -> MotionClip:
    return MotionClip.from_dict(json.loads(Path(path).read_text()))


def load_dataset(directory):
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise ContractError(f"no clip files in {directory}")
    return [load_clip(p) for p in paths]


def from_flat_sequence(rows, fps=FRAME_RATE, root="rotvec", name="imported", model=""):
    """Adapt pre-flattened per-frame coordinates (e.g. converted mocap) into a clip.

    Each row is ``root position (3), root rotation (3 rotvec or 4 quat), joint angles``.
    """
    rows = np.asarray(rows, dtype=float)
    if root == "rotvec":
        frames = np.concatenate([rows[:, :3], quat.exp(rows[:, 3:6]), rows[:, 6:]], axis=1)
    elif root == "quat":
        frames = np.concatenate([rows[:, :3], quat.normalize(rows[:, 3:7]), rows[:, 7:]], axis=1)
    else:
        raise ContractError(f"unknown root encoding {root!r}")
    return MotionClip(frames, fps, name=name, model=model)


# -- finite differences ----------------------------------------------------

def coordinate_delta(qa, qb):
    """Velocity-space difference ``qb - qa`` (root rotation as a body-frame rotation vector)."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    out = np.empty(qa.shape[:-1] + (qa.shape[-1] - 1,))
    out[..., :3] = qb[..., :3] - qa[..., :3]
    out[..., 3:6] = quat.log(quat.mul(quat.conj(qa[..., 3:7]), qb[..., 3:7]))
    out[..., 6:] = qb[..., 7:] - qa[..., 7:]
    return out


def finite_difference_velocities(frames, dt):
    frames = np.asarray(frames, dtype=float)
    T = len(frames)
    if T < 2:
        return np.zeros((T, frames.shape[1] - 1))
    fwd = coordinate_delta(frames[:-1], frames[1:]) / dt
    vel = np.empty((T, frames.shape[1] - 1))
    vel[0] = fwd[0]
    vel[-1] = fwd[-1]
    if T > 2:
        vel[1:-1] = coordinate_delta(frames[:-2], frames[2:]) / (2 * dt)
    return vel


def finite_difference_accelerations(frames, dt):
    frames = np.asarray(frames, dtype=float)
    T = len(frames)
    acc = np.zeros((T, frames.shape[1] - 1))
    if T < 3:
        return acc
    half = coordinate_delta(frames[:-1], frames[1:]) / dt
    acc[1:-1] = (half[1:] - half[:-1]) / dt
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    return acc
