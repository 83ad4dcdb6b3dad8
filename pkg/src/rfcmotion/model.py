"""Humanoid model description, loading, forward kinematics and point Jacobians."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from . import _kernels as K
from . import quat
from .errors import ContractError, ParseError, StructureError, ValidationError

log = logging.getLogger(__name__)

ROOT_DOFS = 6
DEFAULT_ARMATURE = 0.01
KD_RATIO = 0.2
TORQUE_LIMIT_WINDOW = (50.0, 200.0)
GRAVITY = (0.0, -9.81, 0.0)

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
_GEOMS = ("sphere", "capsule", "box")


@dataclass(frozen=True)
class Geom:
    kind: str
    radius: float = 0.0
    half_extents: tuple = (0.0, 0.0, 0.0)
    pos: tuple = (0.0, 0.0, 0.0)
    to: tuple = (0.0, 0.0, 0.0)

    def contact_points(self):
        """Sample points (body frame) and their radii used for ground contact."""
        if self.kind == "sphere":
            return [np.array(self.pos, float)], [self.radius]
        if self.kind == "capsule":
            return [np.array(self.pos, float), np.array(self.to, float)], [self.radius] * 2
        hx, hy, hz = self.half_extents
        c = np.array(self.pos, float)
        pts = [c + np.array([sx * hx, -hy, sz * hz]) for sx in (-1, 1) for sz in (-1, 1)]
        return pts, [0.0] * 4


@dataclass(frozen=True)
class Body:
    name: str
    parent: int
    mass: float
    inertia: np.ndarray
    offset: np.ndarray
    com: np.ndarray
    geom: Geom | None
    joint: str
    axes: tuple = ()

    @property
    def dof_count(self):
        return ROOT_DOFS if self.joint == "free" else len(self.axes)


class ModelArrays(NamedTuple):
    """Packed link arrays consumed by the compiled kernels."""
    parent: np.ndarray
    axis: np.ndarray
    offset: np.ndarray
    mass: np.ndarray
    com: np.ndarray
    inertia: np.ndarray
    armature: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    tlim: np.ndarray
    cp_link: np.ndarray
    cp_local: np.ndarray
    cp_radius: np.ndarray
    gravity: np.ndarray


@dataclass(eq=False)
class HumanoidModel:
    name: str
    bodies: list
    kp: np.ndarray
    kd: np.ndarray
    torque_limits: np.ndarray
    armature: np.ndarray
    end_effectors: list
    rfc_bodies: list
    gravity: np.ndarray = field(default_factory=lambda: np.array(GRAVITY))
    source: dict = field(default_factory=dict, repr=False)

    @cached_property
    def dof_count(self):
        return sum(b.dof_count for b in self.bodies)

    @property
    def root_dof_count(self):
        return ROOT_DOFS

    @cached_property
    def nq(self):
        return self.dof_count + 1

    @cached_property
    def actuated_dof_count(self):
        return self.dof_count - ROOT_DOFS

    @property
    def body_names(self):
        return [b.name for b in self.bodies]

    @property
    def total_mass(self):
        return float(sum(b.mass for b in self.bodies))

    def body_index(self, name):
        try:
            return self.body_names.index(name)
        except ValueError:
            raise ContractError(f"unknown body {name!r}") from None

    @cached_property
    def body_dofs(self):
        """Per body, the slice of non-root DoF indices (into ``q_nr``)."""
        out, start = [], 0
        for b in self.bodies:
            if b.joint == "free":
                out.append(slice(0, 0))
                continue
            out.append(slice(start, start + len(b.axes)))
            start += len(b.axes)
        return out

    @cached_property
    def body_link(self):
        links = np.zeros(len(self.bodies), dtype=np.int64)
        for i, sl in enumerate(self.body_dofs):
            if i > 0:
                links[i] = sl.stop  # link index = non-root DoF index + 1
        return links

    @cached_property
    def hash(self):
        blob = json.dumps(self.source, sort_keys=True, default=str).encode()
        return hashlib.sha1(blob).hexdigest()[:12]

    @cached_property
    def arrays(self):
        nl = 1 + self.actuated_dof_count
        parent = np.zeros(nl, dtype=np.int64)
        axis = np.zeros((nl, 3))
        offset = np.zeros((nl, 3))
        mass = np.zeros(nl)
        com = np.zeros((nl, 3))
        inertia = np.zeros((nl, 3, 3))
        root = self.bodies[0]
        mass[0], com[0], inertia[0] = root.mass, root.com, root.inertia
        for bi, b in enumerate(self.bodies[1:], start=1):
            sl = self.body_dofs[bi]
            prev = int(self.body_link[b.parent])
            for k, ax in enumerate(b.axes):
                li = sl.start + k + 1
                parent[li] = prev
                axis[li] = ax
                if k == 0:
                    offset[li] = b.offset
                prev = li
            last = int(self.body_link[bi])
            mass[last], com[last], inertia[last] = b.mass, b.com, b.inertia
        cp_link, cp_local, cp_radius = [], [], []
        for bi, b in enumerate(self.bodies):
            if b.geom is None:
                continue
            pts, radii = b.geom.contact_points()
            for pt, r in zip(pts, radii):
                cp_link.append(int(self.body_link[bi]))
                cp_local.append(pt)
                cp_radius.append(r)
        armature = np.concatenate([np.zeros(ROOT_DOFS), self.armature])
        return ModelArrays(
            parent, axis, offset, mass, com, inertia, armature,
            self.kp.copy(), self.kd.copy(), self.torque_limits.copy(),
            np.array(cp_link, dtype=np.int64),
            np.array(cp_local, dtype=float).reshape(-1, 3),
            np.array(cp_radius, dtype=float),
            np.asarray(self.gravity, dtype=float),
        )

    @cached_property
    def tracking_arrays(self):
        """End-effector links and points plus per-body DoF ranges, for the reward kernel."""
        ee_link = np.array([self.body_link[b] for b, _ in self.end_effectors], dtype=np.int64)
        ee_pt = np.array([pt for _, pt in self.end_effectors], dtype=float).reshape(-1, 3)
        dofs = self.body_dofs[1:]
        jstart = np.array([sl.start for sl in dofs], dtype=np.int64)
        jcount = np.array([sl.stop - sl.start for sl in dofs], dtype=np.int64)
        return ee_link, ee_pt, jstart, jcount

    def rest_q(self, height=0.0):
        q = np.zeros(self.nq)
        q[3] = 1.0
        q[1] = height
        return q

    def __repr__(self):
        return f"HumanoidModel({self.name!r}, bodies={len(self.bodies)}, dofs={self.dof_count})"


@dataclass
class HumanoidState:
    q: np.ndarray
    qdot: np.ndarray
    time: float = 0.0

    def copy(self):
        return HumanoidState(self.q.copy(), self.qdot.copy(), self.time)

    @property
    def q_nr(self):
        return self.q[7:]

    @property
    def qdot_nr(self):
        return self.qdot[6:]


def root_dofs(q):
    """The six root coordinates (position, rotation vector) of ``q``."""
    q = np.asarray(q, dtype=float)
    return np.concatenate([q[:3], quat.log(q[3:7])])


def q_from_root_dofs(root6, q_nr):
    return np.concatenate([root6[:3], quat.exp(root6[3:]), np.asarray(q_nr, dtype=float)])


# -- loading ---------------------------------------------------------------

def _vec(value, n, what):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != n:
        raise ParseError(f"{what}: expected {n} numbers, got {arr.size}")
    return arr


def _per_dof(value, n, what):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ParseError(f"{what}: expected 1 or {n} values, got {arr.size}")
    return arr


def _parse_geom(doc):
    if doc is None:
        return None
    kind = doc.get("type")
    if kind not in _GEOMS:
        raise ParseError(f"unknown geometry type {kind!r}")
    pos = tuple(_vec(doc.get("pos", (0, 0, 0)), 3, "geom.pos"))
    if kind == "sphere":
        return Geom(kind, radius=float(doc["radius"]), pos=pos)
    if kind == "capsule":
        frm = tuple(_vec(doc.get("from", pos), 3, "geom.from"))
        return Geom(kind, radius=float(doc["radius"]), pos=frm, to=tuple(_vec(doc["to"], 3, "geom.to")))
    return Geom(kind, half_extents=tuple(_vec(doc["half_extents"], 3, "geom.half_extents")), pos=pos)


def _primitive_inertia(geom, mass):
    """Solid-primitive inertia about the centroid, body axes (capsule as cylinder along its axis)."""
    if geom is None:
        return np.eye(3) * 1e-3 * mass
    if geom.kind == "sphere":
        return np.eye(3) * 0.4 * mass * geom.radius ** 2
    if geom.kind == "box":
        hx, hy, hz = geom.half_extents
        return np.diag([mass * (hy * hy + hz * hz), mass * (hx * hx + hz * hz), mass * (hx * hx + hy * hy)]) / 3.0
    d = np.array(geom.to) - np.array(geom.pos)
    length = float(np.linalg.norm(d))
    r = geom.radius
    ax = d / length if length > 0 else np.array([0.0, 1.0, 0.0])
    i_ax = 0.5 * mass * r * r
    i_perp = mass * (3 * r * r + length * length) / 12.0
    return i_perp * np.eye(3) + (i_ax - i_perp) * np.outer(ax, ax)


def _parse_joint(doc):
    if doc == "free" or (isinstance(doc, dict) and doc.get("type") == "free"):
        return "free", ()
    if not isinstance(doc, dict) or doc.get("type") != "hinge":
        kind = doc.get("type") if isinstance(doc, dict) else doc
        raise ParseError(f"unknown joint kind {kind!r}")
    if "axis" in doc:
        ax = _vec(doc["axis"], 3, "joint.axis")
        return "hinge", (tuple(ax / np.linalg.norm(ax)),)
    order = str(doc.get("order", "xyz")).lower()
    if not 1 <= len(order) <= 3 or any(c not in _AXES for c in order) or len(set(order)) != len(order):
        raise ParseError(f"bad Euler order {order!r}")
    return "hinge", tuple(_AXES[c] for c in order)


def _topological(docs):
    names = [d.get("name") for d in docs]
    if len(set(names)) != len(names) or any(n is None for n in names):
        raise StructureError("body names must be present and unique")
    parent_of = {d["name"]: d.get("parent") for d in docs}
    roots = [n for n, p in parent_of.items() if p is None]
    for n, p in parent_of.items():
        if p is not None and p not in parent_of:
            raise StructureError(f"body {n!r} references missing parent {p!r}")
    # cycle check before root count so mutual-parent pairs report as cycles
    for start in parent_of:
        seen, cur = set(), start
        while cur is not None:
            if cur in seen:
                raise StructureError(f"kinematic cycle through {cur!r}")
            seen.add(cur)
            cur = parent_of[cur]
    if len(roots) != 1:
        raise StructureError(f"expected exactly one root body, found {len(roots)}")
    order, placed = [], set()
    while len(order) < len(docs):
        for d in docs:
            if d["name"] not in placed and (d.get("parent") is None or d.get("parent") in placed):
                order.append(d)
                placed.add(d["name"])
    return order


def load_model(document) -> HumanoidModel:
    """Build a validated model from a path, YAML text or a parsed mapping."""
    is_path = isinstance(document, Path) or (
        isinstance(document, str) and "\n" not in document
        and document.endswith((".yaml", ".yml", ".json")))
    if is_path:
        text = Path(document).read_text()
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(str(exc)) from exc
    elif isinstance(document, str):
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ParseError(str(exc)) from exc
    else:
        doc = document
    if not isinstance(doc, dict) or "bodies" not in doc:
        raise ParseError("model document needs a 'bodies' list")
    defaults = doc.get("defaults", {}) or {}
    body_docs = _topological(list(doc["bodies"]))
    index = {}
    bodies, kp, kd, tl, arm = [], [], [], [], []
    for bdoc in body_docs:
        name = bdoc["name"]
        joint, axes = _parse_joint(bdoc.get("joint", {"type": "hinge"}))
        parent = bdoc.get("parent")
        if parent is None and joint != "free":
            raise StructureError("the root body must use a free joint")
        if parent is not None and joint == "free":
            raise StructureError(f"only the root may have a free joint ({name!r})")
        mass = float(bdoc.get("mass", 0.0))
        if not mass > 0.0:
            raise ValidationError(f"body {name!r}: mass must be positive, got {mass}")
        geom = _parse_geom(bdoc.get("geom"))
        com = _vec(bdoc.get("com", (0, 0, 0)), 3, "com")
        if "inertia" in bdoc:
            inertia = np.asarray(bdoc["inertia"], dtype=float)
            inertia = np.diag(inertia) if inertia.shape == (3,) else inertia.reshape(3, 3)
        else:
            inertia = _primitive_inertia(geom, mass)
        if np.any(np.diag(inertia) <= 0.0):
            raise ValidationError(f"body {name!r}: inertia diagonal must be positive")
        if not np.allclose(inertia, inertia.T):
            raise ValidationError(f"body {name!r}: inertia must be symmetric")
        offset = _vec(bdoc.get("offset", (0, 0, 0)), 3, "offset")
        pidx = -1 if parent is None else index[parent]
        index[name] = len(bodies)
        bodies.append(Body(name, pidx, mass, inertia, offset, com, geom, joint, axes))
        if joint == "free":
            continue
        nd = len(axes)
        kp_b = _per_dof(bdoc.get("kp", defaults.get("kp")), nd, f"{name}.kp")
        if kp_b is None:
            raise ValidationError(f"body {name!r}: kp missing")
        kd_b = _per_dof(bdoc.get("kd", defaults.get("kd")), nd, f"{name}.kd")
        if kd_b is None:
            kd_b = KD_RATIO * kp_b
        elif not np.allclose(kd_b, KD_RATIO * kp_b):
            log.warning("body %s: kd differs from %.1f*kp", name, KD_RATIO)
        tl_b = _per_dof(bdoc.get("torque_limit", defaults.get("torque_limit")), nd, f"{name}.torque_limit")
        if tl_b is None:
            raise ValidationError(f"body {name!r}: torque_limit missing")
        lo, hi = TORQUE_LIMIT_WINDOW
        if np.any(tl_b < lo) or np.any(tl_b > hi):
            log.warning("body %s: torque limits %s outside [%g, %g]", name, tl_b, lo, hi)
        arm_b = _per_dof(bdoc.get("armature", defaults.get("armature", DEFAULT_ARMATURE)), nd,
                         f"{name}.armature")
        kp.append(kp_b)
        kd.append(kd_b)
        tl.append(tl_b)
        arm.append(arm_b)
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)
    if np.any(cat(kp) <= 0) or np.any(cat(tl) <= 0) or np.any(cat(arm) <= 0):
        raise ValidationError("gains, torque limits and armature must be positive")

    names = [b.name for b in bodies]

    def resolve(entry):
        name = entry if isinstance(entry, str) else entry.get("body")
        if name not in names:
            raise StructureError(f"unknown body {name!r}")
        point = np.zeros(3) if isinstance(entry, str) else _vec(entry.get("point", (0, 0, 0)), 3, "point")
        return names.index(name), point

    end_effectors = [resolve(e) for e in doc.get("end_effectors", [])]
    rfc_bodies = [resolve(e)[0] for e in doc.get("rfc_bodies", [names[0]])]
    gravity = _vec(doc.get("gravity", GRAVITY), 3, "gravity")
    return HumanoidModel(
        name=str(doc.get("name", "model")), bodies=bodies,
        kp=cat(kp), kd=cat(kd), torque_limits=cat(tl), armature=cat(arm),
        end_effectors=end_effectors, rfc_bodies=rfc_bodies, gravity=gravity, source=doc,
    )


def builtin_model(name: str) -> HumanoidModel:
    """Load one of the packaged desk-scale models (ball, chain3, pendulum, hopper, biped)."""
    path = resources.files("rfcmotion") / "models" / f"{name}.yaml"
    if not path.is_file():
        raise ContractError(f"no builtin model named {name!r}")
    return load_model(yaml.safe_load(path.read_text()))


def resolve_model(ref) -> HumanoidModel:
    if isinstance(ref, HumanoidModel):
        return ref
    p = Path(str(ref))
    if p.suffix in (".yaml", ".yml") and p.exists():
        return load_model(p)
    return builtin_model(str(ref))


# -- kinematics ------------------------------------------------------------

def _check_q(model, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (model.nq,):
        raise ContractError(f"q must have shape ({model.nq},), got {q.shape}")
    return q


def _check_qd(model, qd):
    qd = np.asarray(qd, dtype=float)
    if qd.shape != (model.dof_count,):
        raise ContractError(f"qdot must have shape ({model.dof_count},), got {qd.shape}")
    return qd


def link_frames(model, q, qdot=None):
    q = _check_q(model, q)
    qd = np.zeros(model.dof_count) if qdot is None else _check_qd(model, qdot)
    a = model.arrays
    return K.kinematics(q, qd, a.parent, a.axis, a.offset)


def forward_kinematics(model: HumanoidModel, q):
    """World position and orientation quaternion of every body frame."""
    R, p, _, _ = link_frames(model, q)
    links = model.body_link
    pos = p[links].copy()
    rot = np.array([quat.from_matrix(R[li]) for li in links])
    return pos, rot


def body_rotations(model, q):
    R, p, _, _ = link_frames(model, q)
    return R[model.body_link], p[model.body_link]


def point_jacobian(model: HumanoidModel, q, body: int, local_point=(0.0, 0.0, 0.0)):
    """6 x n Jacobian, linear rows then angular rows, of a point fixed on ``body``."""
    if not 0 <= int(body) < len(model.bodies):
        raise ContractError(f"body index {body} out of range")
    R, p, S, _ = link_frames(model, q)
    li = int(model.body_link[body])
    x = p[li] + R[li] @ np.asarray(local_point, dtype=float)
    return K.point_jacobian(R, p, S, model.arrays.parent, li, x)


def body_point_world(model, q, body, local_point):
    R, p, _, _ = link_frames(model, q)
    li = int(model.body_link[body])
    return p[li] + R[li] @ np.asarray(local_point, dtype=float)


def center_of_mass(model, q):
    R, p, _, _ = link_frames(model, q)
    a = model.arrays
    coms = p + np.einsum("lij,lj->li", R, a.com)
    return (a.mass[:, None] * coms).sum(0) / a.mass.sum()


def end_effector_positions(model, q):
    R, p, _, _ = link_frames(model, q)
    out = np.zeros((len(model.end_effectors), 3))
    for k, (b, pt) in enumerate(model.end_effectors):
        li = model.body_link[b]
        out[k] = p[li] + R[li] @ pt
    return out


def joint_quaternions(model, q):
    """Local orientation quaternion of each non-root joint, body order."""
    q = np.asarray(q, dtype=float)
    qnr = q[7:]
    out = np.zeros((len(model.bodies) - 1, 4))
    for bi in range(1, len(model.bodies)):
        b = model.bodies[bi]
        sl = model.body_dofs[bi]
        acc = quat.IDENTITY.copy()
        for ax, th in zip(b.axes, qnr[sl]):
            acc = quat.mul(acc, quat.from_axis_angle(ax, th))
        out[bi - 1] = acc
    return out
