import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_q, random_state
from rfcmotion import dynamics as D
from rfcmotion import quat, synth
from rfcmotion.clips import MotionClip
from rfcmotion.errors import ContractError, IntegrationDivergedError
from rfcmotion.model import HumanoidState, body_point_world, builtin_model, load_model, point_jacobian

G = 9.81
NO_CONTACT = D.ContactParams(enabled=False)


def test_free_body_translational_block(ball):
    B = D.mass_matrix(ball, random_q(ball, np.random.default_rng(0)))
    assert np.allclose(B[:3, :3], 2.0 * np.eye(3), atol=1e-14)


@given(st.integers(0, 10_000))
def test_mass_matrix_symmetric_positive_definite(seed):
    m = builtin_model("biped")
    B = D.mass_matrix(m, random_q(m, np.random.default_rng(seed)))
    assert np.abs(B - B.T).max() < 1e-12
    np.linalg.cholesky(B)


def test_two_link_mass_matrix_closed_form(chain3):
    """Hinge block of the hanging chain vs the textbook planar two-link inertia matrix."""
    m1, m2 = chain3.bodies[1].mass, chain3.bodies[2].mass
    I1, I2 = chain3.bodies[1].inertia[2, 2], chain3.bodies[2].inertia[2, 2]
    l1, c1, c2 = 0.5, 0.25, 0.25
    arm = 0.01
    rng = np.random.default_rng(1)
    for _ in range(5):
        q = random_q(chain3, rng)
        q2 = q[8]
        b11 = I1 + m1 * c1 ** 2 + I2 + m2 * (l1 ** 2 + c2 ** 2 + 2 * l1 * c2 * np.cos(q2)) + arm
        b12 = I2 + m2 * (c2 ** 2 + l1 * c2 * np.cos(q2))
        b22 = I2 + m2 * c2 ** 2 + arm
        B = D.mass_matrix(chain3, q)
        assert np.abs(B[6:, 6:] - [[b11, b12], [b12, b22]]).max() < 1e-9


def test_bias_at_rest_is_gravity_only(ball):
    c = D.bias_forces(ball, ball.rest_q(1.0), np.zeros(6))
    assert np.allclose(c, [0, 2.0 * G, 0, 0, 0, 0], atol=1e-12)


def test_bias_equals_inverse_dynamics_zero_accel(biped):
    q, qd = random_state(biped, np.random.default_rng(7))
    a = D.bias_forces(biped, q, qd)
    b = D.inverse_dynamics(biped, q, qd, np.zeros(biped.dof_count), [])
    assert np.abs(a - b).max() <= 1e-12


def test_no_contacts_when_airborne(ball):
    assert D.contact_forces(ball, HumanoidState(ball.rest_q(0.2), np.zeros(6))) == []


def test_penalty_normal_force(ball):
    # sphere radius 0.1, centre at 0.09: penetration 0.01 m
    cf = D.contact_forces(ball, HumanoidState(ball.rest_q(0.09), np.zeros(6)))
    assert len(cf) == 1
    assert cf[0].force[1] == pytest.approx(2e4 * 0.01, rel=1e-12)
    assert np.allclose(cf[0].force[[0, 2]], 0.0)


def test_sliding_friction_saturates(ball):
    qd = np.zeros(6)
    qd[0] = 1.0  # slip speed far above the regularization threshold
    cf = D.contact_forces(ball, HumanoidState(ball.rest_q(0.09), qd))
    f = cf[0].force
    assert np.hypot(f[0], f[2]) == pytest.approx(0.8 * f[1], rel=1e-9)
    assert f[0] < 0


@given(st.integers(0, 10_000))
def test_contact_friction_cone(seed):
    m = builtin_model("biped")
    rng = np.random.default_rng(seed)
    q = random_q(m, rng, height=0.75)
    qd = rng.normal(size=m.dof_count)
    for c in D.contact_forces(m, HumanoidState(q, qd)):
        assert c.force[1] >= 0
        assert np.hypot(c.force[0], c.force[2]) <= 0.8 * c.force[1] + 1e-12


def test_free_fall_acceleration(ball):
    qdd = D.forward_dynamics(ball, HumanoidState(ball.rest_q(2.0), np.zeros(6)), np.zeros(0))
    assert np.allclose(qdd, [0, -G, 0, 0, 0, 0], atol=1e-14)


def test_implicit_gravity_cancel(ball):
    qdd = D.forward_dynamics(ball, HumanoidState(ball.rest_q(2.0), np.zeros(6)), np.zeros(0),
                             D.RootWrench([0, 2.0 * G, 0, 0, 0, 0]))
    assert np.abs(qdd).max() < 1e-14


def test_explicit_force_transported_to_origin(chain3):
    """A force at a point equals the same force at the origin plus its moment."""
    rng = np.random.default_rng(3)
    q, qd = random_state(chain3, rng)
    s = HumanoidState(q, qd)
    f = rng.normal(size=(2, 3)) * 10
    e = rng.normal(size=(2, 3)) * 0.2
    at_point = D.ResidualForceSet(np.hstack([f, np.zeros((2, 3))]), e)
    moved = D.ResidualForceSet(np.hstack([f, np.cross(e, f)]), np.zeros((2, 3)))
    tau = rng.normal(size=2)
    a = D.forward_dynamics(chain3, s, tau, at_point)
    b = D.forward_dynamics(chain3, s, tau, moved)
    assert np.abs(a - b).max() < 1e-9


def test_free_fall_semi_implicit_closed_form(ball):
    h, k = 1.0 / 450, 15
    s = D.step(ball, HumanoidState(ball.rest_q(10.0), np.zeros(6)), np.zeros(0), substeps=k, contact=NO_CONTACT)
    v = -G * h * np.arange(1, k + 1)
    assert abs(s.qdot[1] + G * h * k) <= 1e-12
    assert abs(s.q[1] - (10.0 + h * v.sum())) <= 1e-12


def double_pendulum():
    """The hanging chain with a base heavy enough to act as a fixed pivot."""
    doc = load_model_doc("chain3")
    doc["bodies"][0]["mass"] = 1e6
    return load_model(doc)


def load_model_doc(name):
    import yaml
    from importlib import resources
    return yaml.safe_load((resources.files("rfcmotion") / "models" / f"{name}.yaml").read_text())


def pendulum_energy(m, s):
    """Kinetic plus potential energy of the two links, potential zero at the pivot."""
    pivot = s.q[1] - 0.1
    pe = 0.0
    for b in (1, 2):
        y = body_point_world(m, s.q, b, m.bodies[b].com)[1]
        pe += m.bodies[b].mass * G * (y - pivot)
    return D.kinetic_energy(m, s) + pe


def test_double_pendulum_energy_drift():
    """Frictionless, unactuated, released from 45 degrees; 5 s at 450 Hz."""
    m = double_pendulum()
    hold = D.RootWrench([0.0, m.total_mass * G, 0.0, 0.0, 0.0, 0.0])
    q = m.rest_q(0.0)
    q[7:] = [np.pi / 4, 0.0]
    s = HumanoidState(q, np.zeros(m.dof_count))
    e0 = pendulum_energy(m, s)
    worst = 0.0
    for _ in range(150):
        s = D.step(m, s, np.zeros(2), hold, contact=NO_CONTACT)
        worst = max(worst, abs(pendulum_energy(m, s) - e0))
    assert worst / abs(e0) < 0.01


def test_quaternion_norm_after_many_steps(chain3):
    rng = np.random.default_rng(0)
    s = HumanoidState(random_q(chain3, rng, 50.0), rng.normal(size=chain3.dof_count))
    s = D.step(chain3, s, np.zeros(2), substeps=10_000, contact=NO_CONTACT)
    assert abs(np.linalg.norm(s.q[3:7]) - 1.0) < 1e-9


def test_inverse_forward_round_trip(biped):
    rng = np.random.default_rng(9)
    q, qd = random_state(biped, rng, 0.8)
    s = HumanoidState(q, qd)
    contacts = D.contact_forces(biped, s)
    qdd = rng.normal(size=biped.dof_count)
    gen = D.inverse_dynamics(biped, q, qd, qdd, contacts)
    back = D.forward_dynamics(biped, s, gen[6:], D.RootWrench(gen[:6]), contacts)
    assert np.abs(back - qdd).max() < 1e-8


def test_hover_statics(hopper):
    q = hopper.rest_q(2.0)
    q[7:] = [0.3, -0.5]
    gen = D.inverse_dynamics(hopper, q, np.zeros(hopper.dof_count), np.zeros(hopper.dof_count))
    assert gen[1] == pytest.approx(hopper.total_mass * G, rel=1e-12)
    # non-root entries are the gravity compensation torques: J^T of each body's weight
    comp = np.zeros(hopper.dof_count)
    for b in range(len(hopper.bodies)):
        Jc = point_jacobian(hopper, q, b, hopper.bodies[b].com)[:3]
        comp -= Jc.T @ (hopper.bodies[b].mass * np.array([0, -G, 0]))
    assert np.abs(gen - comp).max() < 1e-9


def test_zero_gravity_null_case():
    m = load_model({"name": "g0", "gravity": [0, 0, 0], "bodies": [
        {"name": "r", "joint": "free", "mass": 3.0},
        {"name": "a", "parent": "r", "offset": [0, -0.2, 0], "joint": {"type": "hinge", "axis": [1, 0, 0]},
         "kp": 300, "torque_limit": 100, "mass": 1.0, "com": [0, -0.1, 0]}]})
    gen = D.inverse_dynamics(m, m.rest_q(0.0), np.zeros(7), np.zeros(7))
    assert np.all(gen == 0.0)


def test_reduction_bit_identical(chain3):
    rng = np.random.default_rng(4)
    q, qd = random_state(chain3, rng)
    s = HumanoidState(q, qd)
    tau = rng.normal(size=2)
    none = D.forward_dynamics(chain3, s, tau, None)
    exp0 = D.forward_dynamics(chain3, s, tau, D.ResidualForceSet(np.zeros((2, 6)), rng.normal(size=(2, 3))))
    imp0 = D.forward_dynamics(chain3, s, tau, D.RootWrench(np.zeros(6)))
    assert np.array_equal(none, exp0) and np.array_equal(none, imp0)
    st_none = D.step(chain3, s, tau, None)
    st_imp = D.step(chain3, s, tau, D.RootWrench(np.zeros(6)))
    assert np.array_equal(st_none.q, st_imp.q) and np.array_equal(st_none.qdot, st_imp.qdot)


def test_momentum_conservation_zero_gravity():
    m = load_model({"name": "g0", "gravity": [0, 0, 0], "bodies": [
        {"name": "r", "joint": "free", "mass": 3.0, "geom": {"type": "sphere", "radius": 0.1}},
        {"name": "a", "parent": "r", "offset": [0, -0.2, 0], "joint": {"type": "hinge", "axis": [1, 0, 0]},
         "kp": 300, "torque_limit": 100, "mass": 1.0, "com": [0, -0.1, 0]},
        {"name": "b", "parent": "a", "offset": [0, -0.2, 0], "joint": {"type": "hinge", "axis": [0, 0, 1]},
         "kp": 300, "torque_limit": 100, "mass": 1.0, "com": [0, -0.1, 0]}]})
    rng = np.random.default_rng(0)
    s = HumanoidState(random_q(m, rng, 5.0), rng.normal(size=m.dof_count))

    def momentum(st):
        total = np.zeros(3)
        for b in range(len(m.bodies)):
            J = point_jacobian(m, st.q, b, m.bodies[b].com)[:3]
            total += m.bodies[b].mass * (J @ st.qdot)
        return total

    p0 = momentum(s)
    for _ in range(30):
        s = D.step(m, s, rng.normal(size=2) * 5, contact=NO_CONTACT)
    assert np.abs(momentum(s) - p0).max() < 1e-6


@given(st.integers(0, 10_000))
def test_implicit_absorbs_root_explicit(seed):
    m = builtin_model("biped")
    rng = np.random.default_rng(seed)
    q, qd = random_state(m, rng)
    s = HumanoidState(q, qd)
    xi = rng.normal(size=(1, 6)) * 50
    e = rng.normal(size=(1, 3)) * 0.2
    explicit = D.ResidualForceSet(xi, e)
    gen = D.generalized_corrective(m, q, explicit)
    assert np.all(gen[6:] == 0.0)
    tau = rng.normal(size=m.actuated_dof_count)
    a = D.forward_dynamics(m, s, tau, explicit)
    b = D.forward_dynamics(m, s, tau, D.RootWrench(gen[:6]))
    assert np.abs(a - b).max() < 1e-9


def test_divergence_raises(ball):
    s = HumanoidState(ball.rest_q(1.0), np.array([np.inf, 0, 0, 0, 0, 0]))
    with pytest.raises(IntegrationDivergedError):
        D.step(ball, s, np.zeros(0))


def test_tau_dimension_contract(chain3):
    with pytest.raises(ContractError):
        D.forward_dynamics(chain3, HumanoidState(chain3.rest_q(), np.zeros(8)), np.zeros(3))


def test_hover_clip_needs_weight(hopper):
    clip = synth.generate_synthetic_clip("hover", hopper, 2.0)
    w, counts = D.required_root_wrench(hopper, clip)
    assert np.all(counts == 0)
    assert np.mean(w[:, 1]) == pytest.approx(hopper.total_mass * G, rel=0.02)


def test_simulated_clip_is_self_consistent(chain3):
    q = chain3.rest_q(3.0)
    q[7:] = [0.4, -0.3]
    s = HumanoidState(q, np.zeros(8))
    frames = [s.q.copy()]
    for _ in range(20):
        s = D.step(chain3, s, np.zeros(2), contact=NO_CONTACT)
        frames.append(s.q.copy())
    w, _ = D.required_root_wrench(chain3, MotionClip(np.array(frames), 30.0), None)
    assert np.linalg.norm(w[1:-1, :3], axis=1).max() < 1.0


def test_removed_support_needs_more_wrench(hopper):
    clip = synth.hover(hopper, 1.0, lift=0.0)  # standing on the ground
    supported, counts = D.required_root_wrench(hopper, clip, "auto")
    assert counts.sum() > 0
    bare, _ = D.required_root_wrench(hopper, clip, None)
    assert np.linalg.norm(bare, axis=1).mean() > np.linalg.norm(supported, axis=1).mean()


def test_short_clip_rejected(ball):
    with pytest.raises(ContractError):
        D.required_root_wrench(ball, MotionClip(np.tile(ball.rest_q(1.0), (2, 1)), 30.0))


def test_wrench_csv_columns(tmp_path, hopper):
    clip = synth.generate_synthetic_clip("hover", hopper, 1.0)
    w, c = D.required_root_wrench(hopper, clip)
    D.write_wrench_csv(tmp_path / "w.csv", w, c)
    rows = list(csv.reader(open(tmp_path / "w.csv")))
    assert rows[0] == ["frame", "fx", "fy", "fz", "tx", "ty", "tz", "contact_count"]
    assert len(rows) == len(clip) + 1
