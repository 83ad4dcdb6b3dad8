import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_q
from rfcmotion import quat
from rfcmotion.errors import ContractError, ParseError, StructureError, ValidationError
from rfcmotion.model import (builtin_model, forward_kinematics, load_model, point_jacobian, body_point_world,
                             center_of_mass, root_dofs, q_from_root_dofs)

TWO_HINGE = """
name: t
bodies:
  - {name: root, joint: free, mass: 2.0, geom: {type: sphere, radius: 0.1}}
  - {name: a, parent: root, offset: [0, -0.2, 0], joint: {type: hinge, axis: [0, 0, 1]}, kp: 500, torque_limit: 150, mass: 1.0}
"""


def test_kd_autofill_from_kp():
    m = load_model(TWO_HINGE)
    assert m.kp[0] == 500
    assert m.kd[0] == pytest.approx(100.0)


def test_armature_default():
    m = load_model(TWO_HINGE)
    assert np.all(m.armature == 0.01)
    assert np.all(m.arrays.armature[:6] == 0.0)


def test_cycle_is_structural_error():
    doc = {"bodies": [
        {"name": "root", "joint": "free", "mass": 1.0},
        {"name": "a", "parent": "b", "joint": {"type": "hinge", "axis": [0, 0, 1]}, "kp": 300, "mass": 1.0},
        {"name": "b", "parent": "a", "joint": {"type": "hinge", "axis": [0, 0, 1]}, "kp": 300, "mass": 1.0},
    ]}
    with pytest.raises(StructureError):
        load_model(doc)


def test_nonpositive_mass_is_validation_error():
    with pytest.raises(ValidationError):
        load_model(TWO_HINGE.replace("mass: 1.0", "mass: 0.0"))


def test_unknown_joint_kind_is_parse_error():
    with pytest.raises(ParseError):
        load_model(TWO_HINGE.replace("type: hinge", "type: slider"))


def test_torque_limit_window_warns(caplog):
    with caplog.at_level(logging.WARNING):
        load_model(TWO_HINGE.replace("torque_limit: 150", "torque_limit: 500"))
    assert "outside" in caplog.text


def test_builtin_models_load():
    for name in ("ball", "chain3", "pendulum", "hopper", "biped"):
        m = builtin_model(name)
        assert m.root_dof_count == 6
        assert len(m.kp) == m.actuated_dof_count
        assert np.allclose(m.kd, 0.2 * m.kp)
    with pytest.raises(ContractError):
        builtin_model("nope")


def test_identity_pose_accumulates_offsets(chain3):
    pos, rot = forward_kinematics(chain3, chain3.rest_q(0.0))
    assert np.allclose(pos, [[0, 0, 0], [0, -0.1, 0], [0, -0.6, 0]], atol=0, rtol=0)
    assert np.allclose(rot, [1, 0, 0, 0])


def test_translation_shifts_every_body(biped):
    rng = np.random.default_rng(3)
    q = random_q(biped, rng)
    p0, _ = forward_kinematics(biped, q)
    q2 = q.copy()
    q2[:3] += [1.0, 2.0, 3.0]
    p1, _ = forward_kinematics(biped, q2)
    assert np.allclose(p1 - p0, [1.0, 2.0, 3.0], atol=1e-12)


def _rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def test_chain_fk_matches_hand_composition(chain3):
    rng = np.random.default_rng(5)
    for _ in range(5):
        q = random_q(chain3, rng)
        R0 = quat.to_matrix(q[3:7])
        p1 = q[:3] + R0 @ [0, -0.1, 0]
        R1 = R0 @ _rz(q[7])
        p2 = p1 + R1 @ [0, -0.5, 0]
        R2 = R1 @ _rz(q[8])
        pos, rot = forward_kinematics(chain3, q)
        assert np.abs(pos - [q[:3], p1, p2]).max() < 1e-10
        for r, Rk in zip(rot, [R0, R1, R2]):
            assert np.abs(quat.to_matrix(r) - Rk).max() < 1e-10


def test_fk_dimension_error(chain3):
    with pytest.raises(ContractError):
        forward_kinematics(chain3, np.zeros(3))


def test_root_translation_jacobian_is_identity(ball):
    q = random_q(ball, np.random.default_rng(0))
    J = point_jacobian(ball, q, 0, (0.05, 0.02, -0.03))
    assert np.array_equal(J[:3, :3], np.eye(3))


def _fd_velocity(model, q, qd, body, pt, eps=1e-6):
    def advance(s):
        out = q.copy()
        out[:3] += s * qd[:3]
        out[3:7] = quat.mul(q[3:7], quat.exp(s * qd[3:6]))
        out[7:] += s * qd[6:]
        return out
    return (body_point_world(model, advance(eps), body, pt) - body_point_world(model, advance(-eps), body, pt)) / (2 * eps)


def test_jacobian_matches_finite_differences(biped):
    rng = np.random.default_rng(11)
    for body in range(len(biped.bodies)):
        q = random_q(biped, rng)
        qd = rng.normal(size=biped.dof_count)
        pt = rng.normal(size=3) * 0.1
        J = point_jacobian(biped, q, body, pt)
        assert np.abs(J[:3] @ qd - _fd_velocity(biped, q, qd, body, pt)).max() < 1e-5


def test_disjoint_branch_columns_zero(biped):
    q = random_q(biped, np.random.default_rng(2))
    left_shin = biped.body_index("lshin")
    J = point_jacobian(biped, q, left_shin, (0, -0.2, 0))
    right = biped.body_dofs[biped.body_index("rthigh")]
    cols = np.arange(right.start, biped.actuated_dof_count) + 6
    assert np.all(J[:, cols] == 0.0)


def test_invalid_body_is_contract_error(chain3):
    with pytest.raises(ContractError):
        point_jacobian(chain3, chain3.rest_q(), 7)


def test_fk_deterministic(biped):
    q = random_q(biped, np.random.default_rng(4))
    a = forward_kinematics(biped, q)
    b = forward_kinematics(biped, q.copy())
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@given(st.integers(0, 10_000))
def test_virtual_work_transpose(seed):
    m = builtin_model("biped")
    rng = np.random.default_rng(seed)
    q = random_q(m, rng)
    qd = rng.normal(size=m.dof_count)
    body = int(rng.integers(len(m.bodies)))
    J = point_jacobian(m, q, body, rng.normal(size=3) * 0.1)[:3]
    f = rng.normal(size=3)
    assert np.isclose(f @ (J @ qd), (J.T @ f) @ qd, rtol=1e-12, atol=1e-12)


@given(st.integers(0, 10_000))
def test_jacobian_consistency_property(seed):
    m = builtin_model("chain3")
    rng = np.random.default_rng(seed)
    q = random_q(m, rng)
    qd = rng.normal(size=m.dof_count)
    body = int(rng.integers(len(m.bodies)))
    v = point_jacobian(m, q, body, (0.0, -0.3, 0.0))[:3] @ qd
    fd = _fd_velocity(m, q, qd, body, (0.0, -0.3, 0.0))
    assert np.abs(v - fd).max() <= 1e-5 * max(1.0, np.abs(v).max())


def test_root_dof_round_trip():
    rng = np.random.default_rng(0)
    q = random_q(builtin_model("biped"), rng)
    q2 = q_from_root_dofs(root_dofs(q), q[7:])
    # the double cover may flip the sign
    assert np.allclose(q2[:3], q[:3]) and abs(abs(q2[3:7] @ q[3:7]) - 1) < 1e-12
    assert np.allclose(q2[7:], q[7:])


def test_center_of_mass_single_body(ball):
    q = ball.rest_q(0.7)
    assert np.allclose(center_of_mass(ball, q), [0, 0.7, 0])
