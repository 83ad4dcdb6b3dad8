"""Quaternion helpers, scalar-first ``(w, x, y, z)``, y-up world."""

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
UP = np.array([0.0, 1.0, 0.0])


def normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def mul(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1 and b.ndim == 1:
        aw, ax, ay, az = a.tolist()
        bw, bx, by, bz = b.tolist()
        return np.array([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ])
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def _cross(u, v):
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx], axis=-1)


def conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.ndim == 1:
        # one rotation applied to any number of vectors
        return v @ _matrix1(q).T
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * _cross(u, v)
    return v + w * t + _cross(u, t)


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def exp(rotvec):
    """Quaternion of a rotation vector (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=float)
    th = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    small = th < 1e-12
    safe = np.where(small, 1.0, th)
    s = np.where(small, 0.5, np.sin(0.5 * th) / safe)
    out = np.concatenate([np.cos(0.5 * th), s * rotvec], axis=-1)
    return normalize(out)


def log(q):
    """Rotation vector of ``q`` with angle in [0, pi] (double cover folded)."""
    q = np.asarray(q, dtype=float)
    q = np.where(q[..., :1] < 0.0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    th = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    scale = np.where(small, 2.0, th / np.where(small, 1.0, s))
    return scale * v


def angle(q):
    """Rotation angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def _matrix1(q):
    w, x, y, z = q.tolist()
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def to_matrix(q):
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        return _matrix1(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def from_matrix(R):
    """Shepperd's method; returns the representative with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def yaw(q):
    """Heading angle about world-up, taken from the twist part of ``q``."""
    q = np.asarray(q, dtype=float)
    return 2.0 * np.arctan2(q[..., 2], q[..., 0])


def heading_quat(q):
    """Twist of ``q`` about world-up (swing-twist decomposition)."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        n = float(np.hypot(q[0], q[2]))
        return IDENTITY.copy() if n < 1e-12 else np.array([q[0] / n, 0.0, q[2] / n, 0.0])
    tw = np.stack([q[..., 0], np.zeros_like(q[..., 0]), q[..., 2], np.zeros_like(q[..., 0])], -1)
    n = np.linalg.norm(tw, axis=-1, keepdims=True)
    ident = np.broadcast_to(IDENTITY, tw.shape)
    return np.where(n < 1e-12, ident, tw / np.where(n < 1e-12, 1.0, n))


def remove_heading(q):
    """``heading^-1 * q``: the orientation with its yaw twist removed."""
    return mul(conj(heading_quat(q)), q)


def from_yaw(angle):
    angle = np.asarray(angle, dtype=float)
    return np.stack([np.cos(0.5 * angle), np.zeros_like(angle), np.sin(0.5 * angle), np.zeros_like(angle)], -1)


def to_euler_xyz(q):
    """Intrinsic x-y-z Euler angles (R = Rx(a) Ry(b) Rz(c))."""
    R = to_matrix(q)
    b = np.arcsin(np.clip(R[..., 0, 2], -1.0, 1.0))
    a = np.arctan2(-R[..., 1, 2], R[..., 2, 2])
    c = np.arctan2(-R[..., 0, 1], R[..., 0, 0])
    return np.stack([a, b, c], -1)
