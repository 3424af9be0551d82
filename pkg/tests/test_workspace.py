import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wssl.datagen import SPHERICAL_WRIST_TWIST
from wssl.kinematics import IKSettings, Manipulator, rpy_to_rotation
from wssl.workspace import (BitTensor, Mode, Scope, build_scope, discretize_workspace, flatten,
                            label_nodes, node_pose, slice_output, unflatten)

POSITION_ONLY = IKSettings(mask=[1, 1, 1, 0, 0, 0])


def wrist_arm(d3, d4, a2, a3):
    return Manipulator.from_arrays([0, 0, d3, d4, 0, 0], [0, a2, a3, 0, 0, 0], SPHERICAL_WRIST_TWIST)


# build_scope ---------------------------------------------------------------


def test_scope_unit_step_27_nodes():
    s = build_scope([-1, -1, -1], [1, 1, 1], 1.0)
    assert s.dims == (3, 3, 3) and s.size == 27


def test_scope_fine_step_9261_nodes():
    s = build_scope([-1, -1, -1], [1, 1, 1], 0.1)
    assert s.dims == (21, 21, 21) and s.size == 9261
    np.testing.assert_allclose(np.diff(s.n_x), 0.1, atol=1e-12)
    assert s.n_x[0] == -1.0 and abs(s.n_x[-1] - 1.0) < 1e-12


def test_scope_single_node():
    s = build_scope([0, 0, 0], [0, 0, 0], 0.5)
    assert s.size == 1


@pytest.mark.parametrize("delta", [0.0, -0.1, float("nan")])
def test_scope_rejects_bad_delta(delta):
    with pytest.raises(ValueError):
        build_scope([-1] * 3, [1] * 3, delta)


def test_scope_rejects_inverted_range_and_nonincreasing_vectors():
    with pytest.raises(ValueError):
        build_scope([1, 0, 0], [0, 0, 0], 0.1)
    with pytest.raises(ValueError):
        Scope([0, 0], [0], [0], [0, 0, 0])


def test_scope_dict_round_trip_and_unknown_keys():
    s = build_scope([-1, 0, 0], [1, 0.5, 0], [0.5, 0.25, 1.0], (0.1, 0.2, 0.3), Mode.ORIENTATION)
    t = Scope.from_dict(s.to_dict())
    assert t.to_dict() == s.to_dict()
    with pytest.raises(ValueError):
        Scope.from_dict({**s.to_dict(), "extra": 1})
    r = Scope.from_dict({"range_min": [-1] * 3, "range_max": [1] * 3, "delta": 0.5})
    assert r.dims == (5, 5, 5)


@given(st.floats(-3, 3), st.floats(0, 4), st.floats(0.05, 2))
def test_axis_is_equispaced_and_within_range(lo, width, step):
    s = build_scope([lo] * 3, [lo + width] * 3, step)
    v = s.n_x
    assert v[0] == lo
    assert v[-1] <= lo + width + 1e-9 * step
    if v.size > 1:
        np.testing.assert_allclose(np.diff(v), step, rtol=1e-9, atol=1e-12)
    # one more step would leave the range (up to rounding)
    assert v[-1] + step > lo + width - 0.5 * step


# node_pose -----------------------------------------------------------------


def test_node_pose_corner():
    s = build_scope([-1] * 3, [1] * 3, 1.0, n_i=(0.2, -0.3, 0.4))
    p = node_pose(s, 1, 1, 1)
    np.testing.assert_array_equal(p.position, [-1, -1, -1])
    np.testing.assert_allclose(p.rotation, rpy_to_rotation([0.2, -0.3, 0.4]), atol=1e-15)


def test_node_pose_identity_orientation_everywhere():
    s = build_scope([-1] * 3, [1] * 3, 1.0)
    for idx in [(1, 1, 1), (2, 3, 1), (3, 3, 3)]:
        np.testing.assert_array_equal(node_pose(s, *idx).rotation, np.eye(3))


def test_node_pose_orientation_center():
    s = build_scope([-math.pi] * 3, [math.pi] * 3, math.pi / 3, n_i=(0.5, 0, 0), mode="ow")
    assert s.dims == (7, 7, 7)
    p = node_pose(s, 4, 4, 4)
    np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_array_equal(p.position, [0.5, 0, 0])


def test_node_pose_bounds():
    s = build_scope([-1] * 3, [1] * 3, 1.0)
    for bad in [(0, 1, 1), (4, 1, 1), (1, 1, 4)]:
        with pytest.raises(IndexError):
            node_pose(s, *bad)


def test_node_poses_follow_flatten_order():
    s = build_scope([-1, 0, 2], [1, 1, 3], [1, 0.5, 1])
    pos, rot = s.node_poses()
    lx, ly, lz = s.dims
    c = 0
    for i in range(1, lx + 1):
        for j in range(1, ly + 1):
            for k in range(1, lz + 1):
                np.testing.assert_array_equal(pos[c], node_pose(s, i, j, k).position)
                c += 1


# flatten / slice -----------------------------------------------------------


def test_flatten_first_node():
    b = np.zeros((2, 2, 2), bool)
    b[0, 0, 0] = True
    np.testing.assert_array_equal(flatten(BitTensor(b)), [1, 0, 0, 0, 0, 0, 0, 0])


def test_flatten_z_innermost():
    b = np.zeros((2, 2, 2), bool)
    b[0, 0, 1] = True
    y = flatten(BitTensor(b))
    assert y[1] == 1 and y.sum() == 1


def test_flatten_round_trip_exhaustive_small_dims():
    rng = np.random.default_rng(0)
    for lx in range(1, 9):
        for ly in range(1, 9):
            for lz in range(1, 9):
                P = BitTensor(rng.random((lx, ly, lz)) < 0.5)
                y = flatten(P)
                assert y.dtype == np.uint8 and y.size == lx * ly * lz
                assert unflatten(y, P.dims) == P
                assert BitTensor.from_text(P.to_text(), P.dims) == P


def test_unflatten_length_mismatch():
    with pytest.raises(ValueError):
        unflatten(np.zeros(7), (2, 2, 2))


def test_slice_output_cases():
    y = np.arange(1, 9262)
    s = slice_output(y, 5293, 6615)
    assert s.size == 1323 and s[0] == 5293 and s[-1] == 6615
    np.testing.assert_array_equal(slice_output(y, 1, 1), [1])
    np.testing.assert_array_equal(slice_output(y, 1, len(y)), y)
    for lo, hi in [(0, 3), (3, 2), (1, 9262)]:
        with pytest.raises(IndexError):
            slice_output(y, lo, hi)


def test_csv_headers():
    s = build_scope([0] * 3, [1] * 3, 1.0)
    P = BitTensor(np.ones(s.dims, bool))
    text = P.to_csv(s)
    assert text.splitlines()[0] == "x,y,z,bit"
    assert text.splitlines()[1] == "0.0,0.0,0.0,1"
    ow = build_scope([0] * 3, [1] * 3, 1.0, mode="ow")
    assert P.to_csv(ow).splitlines()[0] == "roll,pitch,yaw,bit"


# discretize_workspace ------------------------------------------------------


def test_short_arm_reaches_at_most_origin():
    m = wrist_arm(0.025, 0.025, 0.025, 0.025)
    assert m.reach_bound == pytest.approx(0.1)
    s = build_scope([-1] * 3, [1] * 3, 0.5)
    y = flatten(discretize_workspace(m, s))
    assert y.sum() <= 1
    centre = (2 * 5 + 2) * 5 + 2
    assert all(y[k] == 0 for k in range(y.size) if k != centre)


def test_single_unreachable_node():
    m = wrist_arm(0.1, 0.1, 0.1, 0.1)
    s = build_scope([3, 3, 3], [3, 3, 3], 1.0)
    P = discretize_workspace(m, s)
    assert P.dims == (1, 1, 1) and not P.bits.any()


def test_planar_annulus_within_one_voxel():
    delta = 0.1
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    s = build_scope([-2.2, -2.2, 0], [2.2, 2.2, 0], delta)
    bits = flatten(discretize_workspace(m, s, POSITION_ONLY)).astype(bool)
    r = np.linalg.norm(s.grid(), axis=1)
    truth = r <= 2.0
    wrong = bits != truth
    assert wrong.mean() <= 0.02
    # every disagreement sits within one voxel diagonal of the boundary or the singular start axis
    near_edge = np.abs(r - 2.0) <= delta * math.sqrt(2)
    on_axis = np.abs(s.grid()[:, 1]) < 1e-9
    assert np.all(near_edge[wrong] | on_axis[wrong])


def test_planar_annulus_nonsingular_start():
    delta = 0.1
    m = Manipulator.from_arrays([0, 0], [1, 1], [0, 0])
    s = build_scope([-2.2, -2.2, 0], [2.2, 2.2, 0], delta)
    ik = IKSettings(mask=[1, 1, 1, 0, 0, 0], q0=[0.3, 0.9])
    bits = flatten(discretize_workspace(m, s, ik)).astype(bool)
    r = np.linalg.norm(s.grid(), axis=1)
    wrong = bits != (r <= 2.0)
    assert np.all(np.abs(r[wrong] - 2.0) <= delta * math.sqrt(2))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0, 0.5), min_size=4, max_size=4),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)))
def test_prefilter_equivalence(geom, n_i):
    m = wrist_arm(*geom)
    s = build_scope([-1] * 3, [1] * 3, 0.5, n_i=n_i)
    assert discretize_workspace(m, s, prefilter=True) == discretize_workspace(m, s, prefilter=False)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(0.01, 0.5), min_size=4, max_size=4), st.floats(0.25, 4.0))
def test_scaling_invariance(geom, s):
    m = wrist_arm(*geom)
    sc = build_scope([-1] * 3, [1] * 3, 0.5)
    ik = IKSettings()
    base = discretize_workspace(m, sc, ik)
    assert discretize_workspace(m.scaled(s), sc.scaled(s), ik.scaled(s)) == base


def test_threads_do_not_change_output():
    m = wrist_arm(0.3, 0.2, 0.4, 0.1)
    s = build_scope([-1] * 3, [1] * 3, 0.25)
    one = discretize_workspace(m, s, threads=1)
    pos, rot = s.node_poses()
    many = label_nodes(m.dh[None], pos[None], rot[None], IKSettings(), threads=4, chunk=37)
    np.testing.assert_array_equal(flatten(one).astype(bool), many[0])


def test_orientation_workspace_at_reachable_point():
    m = wrist_arm(0.2, 0.3, 0.3, 0.2)
    s = build_scope([-math.pi] * 3, [math.pi] * 3, math.pi / 2, n_i=(0.3, 0.2, 0.1), mode="ow")
    P = discretize_workspace(m, s)
    assert P.dims == (5, 5, 5)
    # a spherical wrist reaches any orientation at a point well inside its reach
    assert P.bits.mean() > 0.5
