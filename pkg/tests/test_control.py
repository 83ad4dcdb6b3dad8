import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfcmotion import control as C
from rfcmotion import dynamics as D
from rfcmotion.errors import ContractError, IntegrationDivergedError
from rfcmotion.model import HumanoidState, load_model


def one_joint(kp, limit, mass=0.1, gravity=(0, -9.81, 0), base=1e6):
    return load_model({"name": "j1", "gravity": list(gravity), "bodies": [
        {"name": "base", "joint": "free", "mass": base},
        {"name": "arm", "parent": "base", "joint": {"type": "hinge", "axis": [0, 0, 1]}, "kp": kp,
         "torque_limit": limit, "mass": mass, "com": [0.05, 0, 0]}]})


@pytest.fixture(scope="module")
def j300():
    return one_joint(300, 100)


def test_pd_direct(j300):
    assert j300.kd[0] == 60
    assert C.pd_torques(j300, [0.1], [0.0], [0.0])[0] == pytest.approx(30.0, abs=1e-12)


def test_pd_equilibrium(j300):
    assert C.pd_torques(j300, [0.4], [0.4], [0.0])[0] == 0.0


def test_pd_clamped():
    m = one_joint(1000, 200)
    assert C.pd_torques(m, [1.0], [0.0], [0.0])[0] == 200.0
    assert C.pd_torques(m, [-1.0], [0.0], [0.0])[0] == -200.0


def test_stable_pd_h0_is_pd(j300):
    rng = np.random.default_rng(0)
    for _ in range(10):
        u, q, qd = rng.normal(size=(3, 1))
        assert np.array_equal(C.stable_pd_torques(j300, u, q, qd, 0.0), C.pd_torques(j300, u, q, qd))


def test_stable_pd_lookahead(j300):
    tau = C.stable_pd_torques(j300, [0.1], [0.0], [1.0], 1.0 / 450)
    assert tau[0] == pytest.approx(300 * (0.1 - 1 / 450) - 60, abs=1e-12)
    assert tau[0] == pytest.approx(-30.667, abs=1e-3)


def _step_response(model, stable, seconds=1.0):
    s = HumanoidState(model.rest_q(0.0), np.zeros(7))
    peak = 0.0
    for _ in range(int(seconds * 30)):
        s = D.step_pd(model, s, np.array([0.5]), stable=stable, contact=D.ContactParams(enabled=False))
        peak = max(peak, abs(s.q[7]))
    return peak


def test_stable_pd_bounded_where_plain_pd_diverges():
    m = one_joint(1000, 1e9, gravity=(0, 0, 0))
    assert _step_response(m, stable=True) < 0.75
    try:
        assert _step_response(m, stable=False) > 100.0
    except IntegrationDivergedError:
        pass


def test_compose_target():
    assert np.array_equal(C.compose_target([0.2, -0.1], [0.0, 0.0]), [0.2, -0.1])
    assert C.compose_target([0.2], [-0.05])[0] == pytest.approx(0.15, abs=1e-15)
    with pytest.raises(ContractError):
        C.compose_target([0.2], [0.1, 0.1])


def test_residual_reparametrization(chain3):
    rng = np.random.default_rng(2)
    q_ref = rng.normal(size=2)
    vec = rng.normal(size=C.action_dim(chain3, C.RFC_IMPLICIT))
    res = C.split_action(chain3, C.RFC_IMPLICIT, vec, residual=True)
    shifted = vec.copy()
    shifted[:2] = q_ref + vec[:2]
    plain = C.split_action(chain3, C.RFC_IMPLICIT, shifted)
    assert np.array_equal(res.target(q_ref), plain.target())
    s = HumanoidState(chain3.rest_q(1.0), np.zeros(8))
    a = D.step_pd(chain3, s, res.target(q_ref), C.scale_corrective(res))
    b = D.step_pd(chain3, s, plain.target(), C.scale_corrective(plain))
    assert np.array_equal(a.q, b.q)


def test_scale_implicit():
    a = C.CompositeAction(C.RFC_IMPLICIT, np.zeros(2), D.RootWrench([0, 1, 0, 0, 0, 0]))
    assert np.array_equal(C.scale_corrective(a).eta, [0, 100, 0, 0, 0, 0])
    z = C.CompositeAction(C.RFC_IMPLICIT, np.zeros(2), D.RootWrench(np.zeros(6)))
    assert np.array_equal(C.scale_corrective(z).eta, np.zeros(6))


def test_scale_explicit_points_unchanged(chain3):
    rng = np.random.default_rng(1)
    w, e = rng.normal(size=(2, 6)), rng.normal(size=(2, 3))
    a = C.CompositeAction(C.RFC_EXPLICIT, np.zeros(2), D.ResidualForceSet(w, e))
    out = C.scale_corrective(a)
    assert np.array_equal(out.wrenches, 100 * w)
    assert np.array_equal(out.points, e)


def test_scale_plain_is_contract_error():
    with pytest.raises(ContractError):
        C.scale_corrective(C.CompositeAction(C.PLAIN, np.zeros(2)))


def test_mode_corrective_mismatch():
    with pytest.raises(ContractError):
        C.CompositeAction(C.RFC_IMPLICIT, np.zeros(2), None)
    with pytest.raises(ContractError):
        C.CompositeAction("torque", np.zeros(2))


def test_action_layout(chain3):
    assert C.action_dim(chain3, C.PLAIN) == 2
    assert C.action_dim(chain3, C.RFC_IMPLICIT) == 8
    assert C.action_dim(chain3, C.RFC_EXPLICIT) == 2 + 18
    vec = np.arange(20.0)
    a = C.split_action(chain3, C.RFC_EXPLICIT, vec)
    assert np.array_equal(a.u, [0, 1])
    assert np.array_equal(a.corrective.wrenches, np.arange(2, 14.0).reshape(2, 6))
    assert np.array_equal(a.corrective.points, np.arange(14, 20.0).reshape(2, 3))


@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=2))
def test_clamp_idempotent(vals):
    lim = np.array([100.0, 100.0])
    once = C._clamp(np.array(vals), lim)
    assert np.array_equal(C._clamp(once, lim), once)


@given(st.integers(0, 10_000))
def test_pd_affine_in_u(seed):
    m = one_joint(300, 1e9)
    rng = np.random.default_rng(seed)
    q, qd = rng.normal(size=2)
    u0, du = rng.normal(size=2)
    t = [C.pd_torques(m, [u0 + k * du], [q], [qd])[0] for k in range(3)]
    assert t[2] - t[1] == pytest.approx(t[1] - t[0], rel=1e-9, abs=1e-9)
