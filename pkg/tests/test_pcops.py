import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointtrack import pcops
from pointtrack.diffcore import ContractError, EmptyInputError
from pointtrack.pcops import Box3D

from oracles import brute_ball, brute_in_box


def test_normalize_count_duplicates_from_input():
    pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2.0]])
    out = pcops.normalize_count(pts, 5, 0)
    assert len(out) == 5
    assert {tuple(p) for p in out} <= {tuple(p) for p in pts}


def test_normalize_count_subset_when_shrinking():
    pts = np.random.default_rng(0).normal(size=(2048, 3))
    out = pcops.normalize_count(pts, 1024, 1)
    assert len(out) == 1024
    assert not (Counter(map(tuple, out)) - Counter(map(tuple, pts)))


def test_normalize_count_deterministic():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    assert np.array_equal(pcops.normalize_count(pts, 80, 3), pcops.normalize_count(pts, 80, 3))


def test_normalize_count_empty():
    with pytest.raises(EmptyInputError):
        pcops.normalize_count(np.zeros((0, 3)), 4, 0)


def test_random_subsample_full_is_permutation():
    pts = np.arange(12.0).reshape(4, 3)
    out, _, idx = pcops.random_subsample(pts, 4, 0)
    assert sorted(idx.tolist()) == [0, 1, 2, 3]
    assert np.array_equal(out, pts[idx])


def test_random_subsample_features_travel():
    pts = np.arange(9.0).reshape(3, 3)
    feats = np.array([[10.0], [20.0], [30.0]])
    out, f, idx = pcops.random_subsample(pts, 1, 5, features=feats)
    assert f[0, 0] == feats[idx[0], 0] and out[0].tolist() in pts.tolist()


def test_random_subsample_too_many():
    with pytest.raises(ContractError):
        pcops.random_subsample(np.zeros((2, 3)), 3, 0)


def test_random_subsample_uniform_inclusion():
    m_in, m_out, trials = 10, 3, 10_000
    hits = np.zeros(m_in)
    for seed in range(trials):
        _, _, idx = pcops.random_subsample(np.zeros((m_in, 3)), m_out, seed)
        hits[idx] += 1
    p = m_out / m_in
    sigma = math.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(hits - trials * p) < 3 * sigma + 1)


def test_ball_query_small_case():
    idx, deg = pcops.ball_query([[0, 0, 0]], [[0.1, 0, 0], [1, 0, 0]], 0.3, 4)
    assert set(idx[0].tolist()) == {0} and not deg[0]


def test_ball_query_large_radius_returns_all():
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    idx, _ = pcops.ball_query(pts[:1], pts, 100.0, 16)
    assert set(idx[0].tolist()) == set(range(10))


def test_ball_query_pads_with_first_and_caps():
    pts = np.array([[0.0, 0, 0], [5, 0, 0], [0.1, 0, 0]])
    idx, _ = pcops.ball_query([[0, 0, 0]], pts, 0.5, 4)
    assert idx[0].tolist() == [0, 2, 0, 0]
    idx, _ = pcops.ball_query([[0, 0, 0]], pts, 10.0, 2)
    assert idx[0].tolist() == [0, 1]


def test_ball_query_empty_ball_falls_back_to_nearest():
    idx, deg = pcops.ball_query([[0, 0, 0]], [[2.0, 0, 0], [1.0, 0, 0]], 0.5, 3)
    assert deg[0] and idx[0].tolist() == [1, 1, 1]


def test_ball_query_no_points():
    with pytest.raises(EmptyInputError):
        pcops.ball_query([[0, 0, 0]], np.zeros((0, 3)), 0.3, 4)


def test_ball_query_matches_exhaustive_scan():
    rng = np.random.default_rng(11)
    for _ in range(100):
        pts = rng.uniform(-1, 1, (rng.integers(1, 40), 3))
        centers = rng.uniform(-1, 1, (5, 3))
        radius = rng.uniform(0.1, 1.5)
        idx, deg = pcops.ball_query(centers, pts, radius, len(pts))
        for k, c in enumerate(centers):
            expect = brute_ball(c, pts, radius)
            if expect:
                assert set(idx[k].tolist()) == expect and not deg[k]
            else:
                assert deg[k]


def test_box_heading_normalized():
    assert Box3D([0, 0, 0], [1, 1, 1], 3 * math.pi).heading == pytest.approx(math.pi)
    assert Box3D([0, 0, 0], [1, 1, 1], -math.pi).heading == pytest.approx(math.pi)


def test_box_rejects_nonpositive_extents():
    with pytest.raises(ContractError):
        Box3D([0, 0, 0], [1, 0, 1], 0)


def test_points_in_box_center_and_boundary():
    box = Box3D([1, 2, 3], [2.0, 4.0, 1.5], 0.0)
    eps = 1e-6
    pts = [[1, 2, 3], [1 + 2.0 + eps, 2, 3], [1 + 2.0 - eps, 2, 3]]
    assert pcops.points_in_box(np.array(pts), box).tolist() == [True, False, True]


def test_points_in_box_quarter_turn_matches_swapped_axis_aligned():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-3, 3, (500, 3))
    rotated = Box3D([0, 0, 0], [1.0, 3.0, 2.0], math.pi / 2)
    swapped = Box3D([0, 0, 0], [3.0, 1.0, 2.0], 0.0)
    assert np.array_equal(pcops.points_in_box(pts, rotated), pcops.points_in_box(pts, swapped))


def test_points_in_box_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(100):
        box = Box3D(rng.uniform(-2, 2, 3), rng.uniform(0.5, 3, 3), rng.uniform(-math.pi, math.pi))
        pts = rng.uniform(-4, 4, (50, 3))
        enlarge = rng.choice([0.0, 2.0])
        assert np.array_equal(pcops.points_in_box(pts, box, enlarge), brute_in_box(pts, box, enlarge))


@settings(max_examples=60, deadline=None)
@given(st.floats(-math.pi, math.pi), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**31))
def test_points_in_box_rigid_invariance(theta, tx, ty, seed):
    rng = np.random.default_rng(seed)
    box = Box3D(rng.uniform(-2, 2, 3), rng.uniform(0.5, 3, 3), rng.uniform(-math.pi, math.pi))
    pts = rng.uniform(-4, 4, (40, 3))
    moved_box = pcops.transform_box(box, theta, [tx, ty, 0.0])
    moved_pts = pcops.transform_points(pts, theta, [tx, ty, 0.0])
    local_a = pcops.to_box_local(pts, box)
    local_b = pcops.to_box_local(moved_pts, moved_box)
    # skip draws that put a point within round-off of a face
    half = box.extents[[1, 0, 2]] / 2
    if np.any(np.abs(np.abs(local_a) - half) < 1e-9):
        return
    np.testing.assert_allclose(local_a, local_b, atol=1e-9)
    assert np.array_equal(pcops.points_in_box(pts, box), pcops.points_in_box(moved_pts, moved_box))


def test_crop_identity_empty_and_idempotent():
    box = Box3D([0, 0, 0], [2, 2, 2], 0.3)
    inside = np.random.default_rng(0).uniform(-0.4, 0.4, (20, 3))
    assert np.array_equal(pcops.crop_points(inside, box), inside)
    assert len(pcops.crop_points(inside + 10, box)) == 0
    mixed = np.random.default_rng(1).uniform(-3, 3, (200, 3))
    once = pcops.crop_points(mixed, box, 2.0)
    assert np.array_equal(pcops.crop_points(once, box, 2.0), once)


def test_search_frame_identity_and_round_trip():
    pts = np.random.default_rng(0).normal(size=(5, 3))
    origin = Box3D([0, 0, 0], [1, 1, 1], 0.0)
    np.testing.assert_allclose(pcops.to_search_frame(pts, origin), pts)
    ref = Box3D([3, -2, 0.5], [1.8, 4, 1.5], 2.4)
    gt = Box3D([3.5, -1, 0.7], [1.8, 4, 1.5], -2.9)
    back = pcops.from_search_frame(pcops.box_to_frame(gt, ref), ref)
    np.testing.assert_allclose(back.center, gt.center, atol=1e-9)
    assert abs(pcops.wrap_angle(back.heading - gt.heading)) < 1e-9
    np.testing.assert_allclose(pcops.to_search_frame(ref.center[None], ref), [[0, 0, 0]], atol=1e-12)


def test_kernels_deterministic_under_seed():
    pts = np.random.default_rng(0).normal(size=(30, 3))
    a = pcops.random_subsample(pts, 10, 42)[2]
    b = pcops.random_subsample(pts, 10, 42)[2]
    assert np.array_equal(a, b)
