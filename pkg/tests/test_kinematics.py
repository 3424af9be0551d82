import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from wssl.kinematics import (DHRow, IKSettings, Manipulator, Pose, differential_motion,
                             dh_transform, fk_batch, forward_kinematics, inverse_kinematics,
                             jacobian, rpy_to_rotation, rpy_to_rotation_batch, solve_ik_batch)
from wssl.datagen import SPHERICAL_WRIST_TWIST

finite = st.floats(-2.0, 2.0, allow_nan=False)
angle = st.floats(-math.pi, math.pi, allow_nan=False)


@st.composite
def arms(draw, n_min=1, n_max=6):
    n = draw(st.integers(n_min, n_max))
    d = draw(st.lists(finite, min_size=n, max_size=n))
    a = draw(st.lists(finite, min_size=n, max_size=n))
    al = draw(st.lists(angle, min_size=n, max_size=n))
    th = draw(st.lists(angle, min_size=n, max_size=n))
    q = draw(st.lists(angle, min_size=n, max_size=n))
    return Manipulator.from_arrays(d, a, al, th), np.array(q)


# independent oracles -------------------------------------------------------


def rot(axis, t):
    c, s = math.cos(t), math.sin(t)
    if axis == "x":
        R = [[1, 0, 0], [0, c, -s], [0, s, c]]
    elif axis == "y":
        R = [[c, 0, s], [0, 1, 0], [-s, 0, c]]
    else:
        R = [[c, -s, 0], [s, c, 0], [0, 0, 1]]
    T = np.eye(4)
    T[:3, :3] = R
    return T


def trans(x, y, z):
    T = np.eye(4)
    T[:3, 3] = (x, y, z)
    return T


def chain(rows, q):
    """Product of elementary transforms, one link at a time."""
    T = np.eye(4)
    for (th, d, a, al), qi in zip(rows, q):
        T = T @ rot("z", th + qi) @ trans(0, 0, d) @ trans(a, 0, 0) @ rot("x", al)
    return T


def symbolic_link(theta, d, a, alpha):
    t, dd, aa, al = sp.symbols("t d a alpha")
    Rz = sp.Matrix([[sp.cos(t), -sp.sin(t), 0, 0], [sp.sin(t), sp.cos(t), 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    Tz = sp.Matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, dd], [0, 0, 0, 1]])
    Tx = sp.Matrix([[1, 0, 0, aa], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    Rx = sp.Matrix([[1, 0, 0, 0], [0, sp.cos(al), -sp.sin(al), 0], [0, sp.sin(al), sp.cos(al), 0], [0, 0, 0, 1]])
    M = sp.simplify(Rz * Tz * Tx * Rx)
    return np.array(M.subs({t: theta, dd: d, aa: a, al: alpha}).evalf(), dtype=float)


# dh_transform --------------------------------------------------------------


def test_dh_identity_row():
    assert np.array_equal(dh_transform(DHRow(0, 0, 0, 0), 0.0), np.eye(4))


def test_dh_unit_offset_is_translation():
    T = dh_transform(DHRow(0, 0, 1, 0), 0.0)
    np.testing.assert_allclose(T, trans(1, 0, 0), atol=1e-15)


def test_dh_matches_symbolic_product():
    T = dh_transform(DHRow(0, 0.5, 0, math.pi / 2), math.pi / 2)
    np.testing.assert_allclose(T, symbolic_link(math.pi / 2, 0.5, 0, math.pi / 2), atol=1e-14)


@given(angle, finite, finite, angle, angle)
def test_dh_matches_elementary_chain(th, d, a, al, q):
    np.testing.assert_allclose(dh_transform(DHRow(th, d, a, al), q), chain([(th, d, a, al)], [q]),
                               atol=1e-12)


def test_dhrow_rejects_nonfinite():
    with pytest.raises(ValueError):
        DHRow(0, float("nan"), 0, 0)


# forward kinematics --------------------------------------------------------


def test_fk_zero_rows_identity():
    m = Manipulator.from_arrays([0, 0, 0], [0, 0, 0], [0, 0, 0])
    p = forward_kinematics(m, np.zeros(3))
    np.testing.assert_array_equal(p.matrix(), np.eye(4))


def test_fk_planar_2r_straight():
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    np.testing.assert_allclose(forward_kinematics(m, [0, 0]).position, [2, 0, 0], atol=1e-15)


def test_fk_spherical_wrist_matches_chain():
    d = [0, 0, 0.3, 0.3, 0, 0]
    a = [0, 0.3, 0.3, 0, 0, 0]
    m = Manipulator.from_arrays(d, a, SPHERICAL_WRIST_TWIST)
    rows = list(zip([0] * 6, d, a, SPHERICAL_WRIST_TWIST))
    T = chain(rows, np.zeros(6))
    pose = forward_kinematics(m, np.zeros(6))
    np.testing.assert_allclose(pose.matrix(), T, atol=1e-14)
    np.testing.assert_allclose(pose.position, [0.6, -0.3, 0.3], atol=1e-14)


def test_fk_wrong_joint_count():
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    with pytest.raises(ValueError):
        forward_kinematics(m, [0.0])


@settings(max_examples=60)
@given(arms())
def test_fk_rotation_orthonormal(mq):
    m, q = mq
    R = forward_kinematics(m, q).rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-9
    np.testing.assert_allclose(forward_kinematics(m, q).matrix(), chain(m.dh, q), atol=1e-10)


@settings(max_examples=30)
@given(st.lists(arms(6, 6), min_size=2, max_size=5))
def test_fk_batch_matches_scalar(items):
    dh = np.stack([m.dh for m, _ in items])
    q = np.stack([q for _, q in items])
    T = fk_batch(dh, q)
    for k, (m, qk) in enumerate(items):
        np.testing.assert_allclose(T[k], forward_kinematics(m, qk).matrix(), atol=1e-12)


# rpy -----------------------------------------------------------------------


def test_rpy_identity():
    np.testing.assert_array_equal(rpy_to_rotation([0, 0, 0]), np.eye(3))


def test_rpy_half_turn_x():
    np.testing.assert_allclose(rpy_to_rotation([math.pi, 0, 0]), np.diag([1, -1, -1]), atol=1e-15)


def test_rpy_matches_elementary_product():
    n = (0.3, -1.1, 2.0)
    R = rpy_to_rotation(n)
    oracle = rot("x", n[0])[:3, :3] @ rot("y", n[1])[:3, :3] @ rot("z", n[2])[:3, :3]
    assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-12
    np.testing.assert_allclose(R, oracle, atol=1e-14)


@given(st.lists(st.tuples(angle, angle, angle), min_size=1, max_size=8))
def test_rpy_batch_agrees(rows):
    rpy = np.array(rows)
    B = rpy_to_rotation_batch(rpy)
    for k, r in enumerate(rpy):
        np.testing.assert_allclose(B[k], rpy_to_rotation(r), atol=1e-14)


# jacobian ------------------------------------------------------------------


def fd_position_jacobian(m, q, h=1e-6):
    cols = []
    for j in range(m.n):
        dq = np.zeros(m.n)
        dq[j] = h
        cols.append((forward_kinematics(m, q + dq).position - forward_kinematics(m, q - dq).position) / (2 * h))
    return np.array(cols).T


def fd_rotation_jacobian(m, q, h=1e-6):
    cols = []
    R0 = forward_kinematics(m, q).rotation
    for j in range(m.n):
        dq = np.zeros(m.n)
        dq[j] = h
        W = (forward_kinematics(m, q + dq).rotation - forward_kinematics(m, q - dq).rotation) / (2 * h) @ R0.T
        cols.append([W[2, 1], W[0, 2], W[1, 0]])
    return np.array(cols).T


def test_jacobian_single_link():
    m = Manipulator.from_arrays([0], [1], [0])
    np.testing.assert_allclose(jacobian(m, [0.0])[:, 0], [0, 1, 0, 0, 0, 1], atol=1e-15)


def test_jacobian_planar_2r_fd():
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    J = jacobian(m, [0.0, 0.0])
    np.testing.assert_allclose(J[:3], fd_position_jacobian(m, np.zeros(2)), atol=1e-6)
    np.testing.assert_allclose(J[:3], [[0, 0], [2, 1], [0, 0]], atol=1e-12)


@settings(max_examples=60)
@given(arms())
def test_jacobian_matches_finite_differences(mq):
    m, q = mq
    J = jacobian(m, q)
    Jp = fd_position_jacobian(m, q)
    scale = max(1.0, np.max(np.abs(Jp)))
    assert np.max(np.abs(J[:3] - Jp)) / scale <= 1e-5
    np.testing.assert_allclose(J[3:], fd_rotation_jacobian(m, q), atol=1e-6)


# differential motion -------------------------------------------------------


def test_dm_identical_zero():
    p = Pose(np.array([0.3, -0.2, 1.0]), rpy_to_rotation([0.1, 0.2, 0.3]))
    np.testing.assert_allclose(differential_motion(p, p), np.zeros(6), atol=1e-15)


def test_dm_pure_translation():
    a = Pose(np.zeros(3), np.eye(3))
    b = Pose(np.array([0.1, 0, 0]), np.eye(3))
    np.testing.assert_allclose(differential_motion(a, b), [0.1, 0, 0, 0, 0, 0], atol=1e-15)


def test_dm_small_rotation_z():
    eps = 1e-4
    a = Pose(np.zeros(3), np.eye(3))
    b = Pose(np.zeros(3), rpy_to_rotation([0, 0, eps]))
    e = differential_motion(a, b)
    np.testing.assert_allclose(e[3:], [0, 0, eps], atol=1e-8)


@given(st.floats(-3.1, 3.1), st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_dm_rotation_is_axis_angle(theta, axis):
    u = np.array(axis) / np.linalg.norm(axis)
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    R = np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * K @ K
    e = differential_motion(Pose(np.zeros(3), np.eye(3)), Pose(np.zeros(3), R))
    np.testing.assert_allclose(e[3:], theta * u, atol=1e-9)


def test_dm_half_turn():
    R = np.diag([1.0, -1.0, -1.0])
    e = differential_motion(Pose(np.zeros(3), np.eye(3)), Pose(np.zeros(3), R))
    assert abs(np.linalg.norm(e[3:]) - math.pi) < 1e-12
    assert abs(abs(e[3]) - math.pi) < 1e-12


# inverse kinematics --------------------------------------------------------


def wrist_arm(d3=0.3, d4=0.3, a2=0.3, a3=0.3):
    return Manipulator.from_arrays([0, 0, d3, d4, 0, 0], [0, a2, a3, 0, 0, 0], SPHERICAL_WRIST_TWIST)


def test_ik_zero_initial_error_returns_q0():
    m = wrist_arm()
    q0 = np.array([0.1, -0.2, 0.3, 0.4, -0.5, 0.6])
    s = IKSettings(q0=q0)
    hist = []
    q = inverse_kinematics(m, forward_kinematics(m, q0), s, history=hist)
    np.testing.assert_array_equal(q, q0)
    assert len(hist) == 1


def test_ik_outside_reach():
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    s = IKSettings(mask=[1, 1, 1, 0, 0, 0])
    assert inverse_kinematics(m, Pose(np.array([3.0, 0, 0]), np.eye(3)), s) is None


def test_ik_settings_validation():
    for bad in ({"tolerance": 0}, {"lambda0": -1}, {"r_max": 0}, {"i_max": 0}):
        with pytest.raises(ValueError):
            IKSettings(**bad)
    with pytest.raises(ValueError):
        IKSettings.from_dict({"tol": 1})
    s = IKSettings(q0=[0.1, 0.2], mask=[1, 1, 1, 0, 0, 0])
    assert IKSettings.from_dict(s.to_dict()).to_dict() == s.to_dict()


def test_ik_round_trip_small():
    rng = np.random.default_rng(5)
    ok = 0
    for _ in range(40):
        m = wrist_arm(*rng.uniform(0, 0.5, 4))
        q_star = rng.uniform(-math.pi, math.pi, 6)
        q = inverse_kinematics(m, forward_kinematics(m, q_star))
        if q is not None:
            e = differential_motion(forward_kinematics(m, q), forward_kinematics(m, q_star))
            assert np.linalg.norm(e) <= 1e-4
            ok += 1
    assert ok >= 38


@settings(max_examples=25, deadline=None)
@given(st.lists(angle, min_size=6, max_size=6), st.lists(st.floats(0, 0.5), min_size=4, max_size=4))
def test_ik_history_strictly_decreasing(q_star, geom):
    m = wrist_arm(*geom)
    hist = []
    inverse_kinematics(m, forward_kinematics(m, np.array(q_star)), history=hist)
    assert len(hist) >= 1
    assert all(b < a for a, b in zip(hist, hist[1:]))


@settings(max_examples=40, deadline=None)
@given(arms(2, 6), st.floats(1e-6, 3.0), st.tuples(angle, angle))
def test_ik_reach_bound(mq, extra, direction):
    m, _ = mq
    s = IKSettings()
    r = m.reach_bound + s.tolerance + extra
    th, ph = direction
    p = r * np.array([math.cos(th) * math.cos(ph), math.sin(th) * math.cos(ph), math.sin(ph)])
    assert inverse_kinematics(m, Pose(p, np.eye(3)), s) is None


def test_ik_batch_independent_of_composition():
    rng = np.random.default_rng(3)
    dh = np.stack([wrist_arm(*rng.uniform(0, 0.5, 4)).dh for _ in range(12)])
    q_star = rng.uniform(-math.pi, math.pi, (12, 6))
    T = fk_batch(dh, q_star)
    s = IKSettings()
    full = solve_ik_batch(dh, T[:, :3, 3], T[:, :3, :3], s)
    for k in (0, 5, 11):
        one = solve_ik_batch(dh[k:k + 1], T[k:k + 1, :3, 3], T[k:k + 1, :3, :3], s)
        assert one.success[0] == full.success[k]
        np.testing.assert_array_equal(one.q[0], full.q[k])
    perm = rng.permutation(12)
    shuffled = solve_ik_batch(dh[perm], T[perm, :3, 3], T[perm, :3, :3], s)
    np.testing.assert_array_equal(shuffled.q, full.q[perm])


# serialization -------------------------------------------------------------


@given(arms())
def test_manipulator_table_round_trip(mq):
    m, _ = mq
    assert Manipulator.from_table(m.to_table()) == m
    assert Manipulator.from_dict(m.to_dict()) == m


def test_manipulator_table_comments_and_errors():
    m = Manipulator.from_table("# theta d a alpha\n0 0 1 0\n\n0 0 1 0  # second\n")
    assert m.n == 2 and m.reach_bound == 2
    with pytest.raises(ValueError):
        Manipulator.from_table("0 0 1\n")
    with pytest.raises(ValueError):
        Manipulator.from_dict({"rows": [], "x": 1})


def test_scaled_arm_scales_positions():
    m = wrist_arm(0.1, 0.2, 0.3, 0.4)
    q = np.array([0.3, -0.1, 0.7, 1.2, -0.4, 2.0])
    np.testing.assert_allclose(forward_kinematics(m.scaled(2.5), q).position,
                               2.5 * forward_kinematics(m, q).position, atol=1e-14)
