"""Compiled rigid-body kernels.

Everything here works on the packed link arrays produced by
:meth:`rfcmotion.model.HumanoidModel.arrays`. Multi-DoF hinges are expanded
into chains of single-axis links (massless except the last), so every link
other than the root carries exactly one DoF.

Conventions
-----------
* ``q`` has length ``n + 1``: root position (3), root quaternion ``(w,x,y,z)``
  (4), then hinge angles. Hinge link ``i`` (``i >= 1``) reads ``q[6 + i]``.
* ``qd`` has length ``n``: root linear velocity in world frame (3), root
  angular velocity in the root frame (3), hinge rates. Link ``i`` owns
  ``qd[5 + i]``.
* Spatial vectors are expressed at the world origin, motion ``[w; v_O]``,
  force ``[n_O; f]``.
"""

import numpy as np
from numba import njit

CORR_NONE = 0
CORR_EXPLICIT = 1
CORR_IMPLICIT = 2

ACT_TORQUE = 0
ACT_PD = 1
ACT_SPD = 2


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True, inline="always")
def mv3(R, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = R[i, 0] * v[0] + R[i, 1] * v[1] + R[i, 2] * v[2]
    return out


@njit(cache=True, inline="always")
def mtv3(R, v):
    out = np.empty(3)
    for i in range(3):
        out[i] = R[0, i] * v[0] + R[1, i] * v[1] + R[2, i] * v[2]
    return out


@njit(cache=True, inline="always")
def mm3(A, B):
    out = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            out[i, j] = A[i, 0] * B[0, j] + A[i, 1] * B[1, j] + A[i, 2] * B[2, j]
    return out


@njit(cache=True, inline="always")
def dot6(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3] + a[4] * b[4] + a[5] * b[5]


@njit(cache=True)
def qmul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def qexp(rv):
    """Unit quaternion for the rotation vector ``rv`` (axis times angle)."""
    th = np.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2])
    out = np.empty(4)
    if th < 1e-12:
        out[0] = 1.0
        out[1] = 0.5 * rv[0]
        out[2] = 0.5 * rv[1]
        out[3] = 0.5 * rv[2]
        nrm = np.sqrt(out[0] ** 2 + out[1] ** 2 + out[2] ** 2 + out[3] ** 2)
        return out / nrm
    s = np.sin(0.5 * th) / th
    out[0] = np.cos(0.5 * th)
    out[1] = s * rv[0]
    out[2] = s * rv[1]
    out[3] = s * rv[2]
    return out


@njit(cache=True)
def quat_to_mat(qt):
    w, x, y, z = qt[0], qt[1], qt[2], qt[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * (y * y + z * z)
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * (x * x + z * z)
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * (x * x + y * y)
    return R


@njit(cache=True)
def axis_angle_mat(axis, th):
    c = np.cos(th)
    s = np.sin(th)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    R = np.empty((3, 3))
    R[0, 0] = t * x * x + c
    R[0, 1] = t * x * y - s * z
    R[0, 2] = t * x * z + s * y
    R[1, 0] = t * x * y + s * z
    R[1, 1] = t * y * y + c
    R[1, 2] = t * y * z - s * x
    R[2, 0] = t * x * z - s * y
    R[2, 1] = t * y * z + s * x
    R[2, 2] = t * z * z + c
    return R


@njit(cache=True)
def kinematics(q, qd, parent, axis, offset):
    """World link frames, hinge motion subspaces and link spatial velocities."""
    L = parent.shape[0]
    R = np.empty((L, 3, 3))
    p = np.empty((L, 3))
    S = np.zeros((L, 6))
    V = np.zeros((L, 6))
    R[0] = quat_to_mat(q[3:7])
    p[0] = q[0:3]
    w = mv3(R[0], qd[3:6])
    V[0, :3] = w
    V[0, 3:] = qd[0:3] + cross(p[0], w)
    for i in range(1, L):
        par = parent[i]
        p[i] = p[par] + mv3(R[par], offset[i])
        R[i] = mm3(R[par], axis_angle_mat(axis[i], q[6 + i]))
        z = mv3(R[par], axis[i])
        S[i, :3] = z
        S[i, 3:] = cross(p[i], z)
        V[i] = V[par] + S[i] * qd[5 + i]
    return R, p, S, V


@njit(cache=True)
def _crm(v, m):
    out = np.empty(6)
    out[:3] = cross(v[:3], m[:3])
    out[3:] = cross(v[:3], m[3:]) + cross(v[3:], m[:3])
    return out


@njit(cache=True)
def _crf(v, f):
    out = np.empty(6)
    out[:3] = cross(v[:3], f[:3]) + cross(v[3:], f[3:])
    out[3:] = cross(v[:3], f[3:])
    return out


@njit(cache=True)
def link_inertias(R, p, mass, com, inertia):
    """Per-link (mass, first moment, rotational inertia about world origin)."""
    L = mass.shape[0]
    hm = np.zeros((L, 3))
    IO = np.zeros((L, 3, 3))
    for i in range(L):
        m = mass[i]
        if m == 0.0:
            continue
        c = p[i] + mv3(R[i], com[i])
        Ic = mm3(mm3(R[i], inertia[i]), R[i].T)
        hm[i] = m * c
        cc = c[0] * c[0] + c[1] * c[1] + c[2] * c[2]
        for a in range(3):
            for b in range(3):
                IO[i, a, b] = Ic[a, b] - m * c[a] * c[b]
            IO[i, a, a] += m * cc
    return hm, IO


@njit(cache=True)
def _imul(m, h, IO, x):
    out = np.empty(6)
    out[:3] = mv3(IO, x[:3]) + cross(h, x[3:])
    out[3:] = m * x[3:] - cross(h, x[:3])
    return out


@njit(cache=True)
def _root_columns(R0, p0):
    """Root motion subspace, one row per root DoF."""
    S0 = np.zeros((6, 6))
    for k in range(3):
        S0[k, 3 + k] = 1.0
        a = np.empty(3)
        a[0] = R0[0, k]
        a[1] = R0[1, k]
        a[2] = R0[2, k]
        S0[3 + k, :3] = a
        S0[3 + k, 3:] = cross(p0, a)
    return S0


@njit(cache=True)
def rnea(q, qd, qdd, R, p, S, V, parent, mass, com, inertia, armature, fext, gravity):
    """Generalized force needed for ``qdd``; ``fext`` are applied spatial forces."""
    L = parent.shape[0]
    n = L + 5
    hm, IO = link_inertias(R, p, mass, com, inertia)
    A = np.zeros((L, 6))
    F = np.zeros((L, 6))
    R0 = R[0]
    w = V[0, :3]
    a0w = mv3(R0, qdd[3:6])
    A[0, :3] = a0w
    A[0, 3:] = qdd[0:3] + cross(p[0], a0w) + cross(qd[0:3], w) - gravity
    for i in range(1, L):
        par = parent[i]
        sv = S[i] * qd[5 + i]
        A[i] = A[par] + S[i] * qdd[5 + i] + _crm(V[i], sv)
    for i in range(L):
        if mass[i] > 0.0:
            F[i] = _imul(mass[i], hm[i], IO[i], A[i]) + _crf(V[i], _imul(mass[i], hm[i], IO[i], V[i]))
        F[i] -= fext[i]
    tau = np.zeros(n)
    for i in range(L - 1, 0, -1):
        d = 5 + i
        tau[d] = dot6(S[i], F[i]) + armature[d] * qdd[d]
        F[parent[i]] += F[i]
    f0 = F[0]
    tau[0:3] = f0[3:]
    mom = f0[:3] - cross(p[0], f0[3:])
    tau[3:6] = mtv3(R0, mom)
    return tau


@njit(cache=True)
def crba(R, p, S, parent, mass, com, inertia, armature):
    L = parent.shape[0]
    n = L + 5
    hm, IO = link_inertias(R, p, mass, com, inertia)
    cm = mass.copy()
    for i in range(L - 1, 0, -1):
        par = parent[i]
        cm[par] += cm[i]
        hm[par] += hm[i]
        IO[par] += IO[i]
    B = np.zeros((n, n))
    S0 = _root_columns(R[0], p[0])
    for i in range(1, L):
        di = 5 + i
        Fi = _imul(cm[i], hm[i], IO[i], S[i])
        B[di, di] = dot6(S[i], Fi) + armature[di]
        j = parent[i]
        while j > 0:
            dj = 5 + j
            val = dot6(S[j], Fi)
            B[di, dj] = val
            B[dj, di] = val
            j = parent[j]
        for k in range(6):
            val = dot6(S0[k], Fi)
            B[di, k] = val
            B[k, di] = val
    for k in range(6):
        Fk = _imul(cm[0], hm[0], IO[0], S0[k])
        for l in range(k, 6):
            val = dot6(S0[l], Fk)
            B[k, l] = val
            B[l, k] = val
        B[k, k] += armature[k]
    return B


@njit(cache=True)
def cholesky_solve(A, b):
    """Solve ``A x = b`` for symmetric positive-definite ``A``; NaNs if not PD."""
    n = A.shape[0]
    Lm = np.zeros((n, n))
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= Lm[j, k] * Lm[j, k]
        if not s > 0.0:
            return np.full(n, np.nan)
        Lm[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= Lm[i, k] * Lm[j, k]
            Lm[i, j] = s / Lm[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= Lm[i, k] * y[k]
        y[i] = s / Lm[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= Lm[k, i] * x[k]
        x[i] = s / Lm[i, i]
    return x


@njit(cache=True)
def point_jacobian(R, p, S, parent, link, x):
    """6 x n Jacobian (linear rows first) of world point ``x`` fixed on ``link``."""
    L = parent.shape[0]
    J = np.zeros((6, L + 5))
    i = link
    while i > 0:
        z = S[i, :3]
        d = 5 + i
        lin = cross(z, x - p[i])
        J[0:3, d] = lin
        J[3:6, d] = z
        i = parent[i]
    for k in range(3):
        J[k, k] = 1.0
        a = np.empty(3)
        a[0] = R[0, 0, k]
        a[1] = R[0, 1, k]
        a[2] = R[0, 2, k]
        J[0:3, 3 + k] = cross(a, x - p[0])
        J[3:6, 3 + k] = a
    return J


@njit(cache=True)
def contact_points(R, p, V, cp_link, cp_local, cp_radius, kc, dc, mu, slip_eps, out_pts, out_f, out_idx):
    """Penalty ground contacts on the plane y = 0. Returns the contact count."""
    count = 0
    for k in range(cp_link.shape[0]):
        li = cp_link[k]
        xc = p[li] + mv3(R[li], cp_local[k])
        low = xc.copy()
        low[1] -= cp_radius[k]
        depth = -low[1]
        if depth <= 0.0:
            continue
        vel = V[li, 3:] + cross(V[li, :3], low)
        fn = kc * depth - dc * vel[1]
        if fn < 0.0:
            fn = 0.0
        vt0 = vel[0]
        vt2 = vel[2]
        speed = np.sqrt(vt0 * vt0 + vt2 * vt2)
        scale = mu * fn / max(speed, slip_eps)
        out_pts[count] = low
        out_f[count, 0] = -scale * vt0
        out_f[count, 1] = fn
        out_f[count, 2] = -scale * vt2
        out_idx[count] = k
        count += 1
    return count


@njit(cache=True)
def _add_point_force(fext, li, x, f):
    fext[li, :3] += cross(x, f)
    fext[li, 3:] += f


@njit(cache=True)
def external_forces(R, p, V, cp_link, cp_local, cp_radius, cparams, use_contacts,
                    corr_kind, rfc_links, xi, e):
    L = R.shape[0]
    fext = np.zeros((L, 6))
    ncp = cp_link.shape[0]
    if use_contacts and ncp > 0:
        pts = np.empty((ncp, 3))
        fs = np.empty((ncp, 3))
        idx = np.empty(ncp, dtype=np.int64)
        cnt = contact_points(R, p, V, cp_link, cp_local, cp_radius,
                             cparams[0], cparams[1], cparams[2], cparams[3], pts, fs, idx)
        for c in range(cnt):
            _add_point_force(fext, cp_link[idx[c]], pts[c], fs[c])
    if corr_kind == CORR_EXPLICIT:
        for j in range(rfc_links.shape[0]):
            li = rfc_links[j]
            Rb = R[li]
            f = mv3(Rb, xi[j, :3])
            x = p[li] + mv3(Rb, e[j])
            _add_point_force(fext, li, x, f)
            fext[li, :3] += mv3(Rb, xi[j, 3:])
    return fext


@njit(cache=True)
def integrate(q, qd, h):
    out = q.copy()
    out[0:3] = q[0:3] + h * qd[0:3]
    qt = qmul(q[3:7], qexp(h * qd[3:6]))
    nrm = np.sqrt(qt[0] ** 2 + qt[1] ** 2 + qt[2] ** 2 + qt[3] ** 2)
    out[3:7] = qt / nrm
    out[7:] = q[7:] + h * qd[6:]
    return out


@njit(cache=True)
def simulate(q, qd, act_kind, act, corr_kind, eta, rfc_links, xi, e, substeps, h,
             use_contacts, cparams, parent, axis, offset, mass, com, inertia, armature,
             kp, kd, tlim, cp_link, cp_local, cp_radius, gravity):
    """Advance ``substeps`` semi-implicit Euler steps.

    ``act`` is a torque vector (``ACT_TORQUE``) or a PD target (``ACT_PD``,
    ``ACT_SPD``) for the non-root DoFs. Returns ``(q, qd, ok)``.
    """
    n = qd.shape[0]
    nr = n - 6
    L = parent.shape[0]
    total = 0.0
    for i in range(L):
        total += mass[i]
    q = q.copy()
    qd = qd.copy()
    zero = np.zeros(n)
    R, p, S, V = kinematics(q, qd, parent, axis, offset)
    for _ in range(substeps):
        fext = external_forces(R, p, V, cp_link, cp_local, cp_radius, cparams, use_contacts,
                               corr_kind, rfc_links, xi, e)
        # linear momentum target: impulse of every external force over the substep
        target = linear_momentum(R, p, V, mass, com)
        for k in range(3):
            imp = total * gravity[k]
            for i in range(L):
                imp += fext[i, 3 + k]
            if corr_kind == CORR_IMPLICIT:
                imp += eta[k]
            target[k] += h * imp
        c = rnea(q, qd, zero, R, p, S, V, parent, mass, com, inertia, armature, fext, gravity)
        B = crba(R, p, S, parent, mass, com, inertia, armature)
        gen = np.zeros(n)
        if corr_kind == CORR_IMPLICIT:
            gen[:6] = eta
        tau = np.empty(nr)
        if act_kind == ACT_TORQUE:
            tau[:] = act
        elif act_kind == ACT_PD:
            for k in range(nr):
                t = kp[k] * (act[k] - q[7 + k]) - kd[k] * qd[6 + k]
                tau[k] = min(max(t, -tlim[k]), tlim[k])
        else:
            for k in range(nr):
                tau[k] = kp[k] * (act[k] - q[7 + k] - h * qd[6 + k]) - kd[k] * qd[6 + k]
        gen[6:] += tau
        if act_kind == ACT_SPD:
            Ba = B.copy()
            for k in range(nr):
                Ba[6 + k, 6 + k] += h * kd[k]
            qdd = cholesky_solve(Ba, gen - c)
            saturated = False
            for k in range(nr):
                t = tau[k] - h * kd[k] * qdd[6 + k]
                if t > tlim[k]:
                    t = tlim[k]
                    saturated = True
                elif t < -tlim[k]:
                    t = -tlim[k]
                    saturated = True
                gen[6 + k] = t
            if saturated:
                qdd = cholesky_solve(B, gen - c)
        else:
            qdd = cholesky_solve(B, gen - c)
        qd = qd + h * qdd
        q = integrate(q, qd, h)
        for k in range(n):
            if not np.isfinite(qd[k]):
                return q, qd, False
        for k in range(q.shape[0]):
            if not np.isfinite(q[k]):
                return q, qd, False
        R, p, S, V = kinematics(q, qd, parent, axis, offset)
        if L > 1:
            # project out the O(h) momentum error of stepping in joint coordinates
            got = linear_momentum(R, p, V, mass, com)
            for k in range(3):
                dv = (target[k] - got[k]) / total
                qd[k] += dv
                for i in range(L):
                    V[i, 3 + k] += dv
    return q, qd, True


@njit(cache=True)
def linear_momentum(R, p, V, mass, com):
    out = np.zeros(3)
    for i in range(R.shape[0]):
        c = mass[i] * (p[i] + mv3(R[i], com[i]))
        wc = cross(V[i, :3], c)
        for k in range(3):
            out[k] += mass[i] * V[i, 3 + k] + wc[k]
    return out


@njit(cache=True)
def tracking(q, qd, parent, axis, offset, mass, com, ee_link, ee_pt, jstart, jcount):
    """Reward features of one state; see :func:`rfcmotion.rewards.tracking_features`."""
    R, p, _, _ = kinematics(q, qd, parent, axis, offset)
    nb = jstart.shape[0]
    jq = np.zeros((nb, 4))
    for b in range(nb):
        acc = np.zeros(4)
        acc[0] = 1.0
        for k in range(jstart[b], jstart[b] + jcount[b]):
            h = 0.5 * q[7 + k]
            s = np.sin(h)
            e = np.empty(4)
            e[0] = np.cos(h)
            e[1] = s * axis[k + 1, 0]
            e[2] = s * axis[k + 1, 1]
            e[3] = s * axis[k + 1, 2]
            acc = qmul(acc, e)
        jq[b] = acc
    ne = ee_link.shape[0]
    ee = np.zeros((ne, 3))
    for k in range(ne):
        ee[k] = p[ee_link[k]] + mv3(R[ee_link[k]], ee_pt[k])
    c = np.zeros(3)
    mt = 0.0
    for li in range(mass.shape[0]):
        c += mass[li] * (p[li] + mv3(R[li], com[li]))
        mt += mass[li]
    c /= mt
    # heading: twist of the root about world-up
    n = np.sqrt(q[3] * q[3] + q[5] * q[5])
    hw, hy = (1.0, 0.0) if n < 1e-12 else (q[3] / n, q[5] / n)
    inv = np.array([hw, 0.0, -hy, 0.0])
    Hi = quat_to_mat(inv)
    ee_loc = np.zeros((ne, 3))
    for k in range(ne):
        d = ee[k].copy()
        d[0] -= q[0]
        d[2] -= q[2]
        ee_loc[k] = mv3(Hi, d)
    root_loc = qmul(inv, q[3:7])
    lin = mv3(Hi, qd[0:3])
    ang = mv3(Hi, mv3(R[0], qd[3:6]))
    return jq, ee, ee_loc, c, root_loc, lin, ang


@njit(cache=True)
def quat_err(a, b):
    """Angle of ``a * conj(b)`` in [0, pi]."""
    w = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    x = -a[0] * b[1] + a[1] * b[0] - a[2] * b[3] + a[3] * b[2]
    y = -a[0] * b[2] + a[1] * b[3] + a[2] * b[0] - a[3] * b[1]
    z = -a[0] * b[3] - a[1] * b[2] + a[2] * b[1] + a[3] * b[0]
    return 2.0 * np.arctan2(np.sqrt(x * x + y * y + z * z), abs(w))


@njit(cache=True)
def pose_error(ja, jb):
    tot = 0.0
    for j in range(ja.shape[0]):
        e = quat_err(ja[j], jb[j])
        tot += e * e
    return tot


@njit(cache=True)
def sqdist(a, b):
    tot = 0.0
    fa = a.ravel()
    fb = b.ravel()
    for i in range(fa.shape[0]):
        d = fa[i] - fb[i]
        tot += d * d
    return tot


@njit(cache=True)
def state_features(q, qd):
    """Heading-free root height, tilt, velocities, then hinge angles and rates."""
    n = np.sqrt(q[3] * q[3] + q[5] * q[5])
    hw, hy = (1.0, 0.0) if n < 1e-12 else (q[3] / n, q[5] / n)
    inv = np.array([hw, 0.0, -hy, 0.0])
    Hi = quat_to_mat(inv)
    t = qmul(inv, q[3:7])
    if t[0] < 0.0:
        t = -t
    s = np.sqrt(t[1] * t[1] + t[2] * t[2] + t[3] * t[3])
    sc = 2.0 if s < 1e-12 else 2.0 * np.arctan2(s, t[0]) / s
    na = q.shape[0] - 7
    out = np.empty(10 + 2 * na)
    out[0] = q[1]
    out[1:4] = sc * t[1:]
    out[4:7] = mv3(Hi, qd[0:3])
    out[7:10] = mv3(Hi, mv3(quat_to_mat(q[3:7]), qd[3:6]))
    out[10:10 + na] = q[7:]
    out[10 + na:] = qd[6:]
    return out
