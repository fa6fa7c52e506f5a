import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_rigid
from skelreg.errors import (
    DegenerateConfiguration, EmptyCloud, KTooLarge, SizeMismatch, TargetTooLarge,
)
from skelreg.geometry import (
    PointCloud, RigidTransform, apply_transform, batch_kabsch, downsample,
    hausdorff_distance, ideal_spacing, kabsch_fit, mean_nn_distance,
    nearest_indices, nearest_neighbors, rotation_about_axis,
)

coords = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 25), st.just(3)), elements=coords)


def double_loop_nn(a, b):
    out = []
    for p in a:
        best = math.inf
        for q in b:
            best = min(best, math.sqrt(sum((p[k] - q[k]) ** 2 for k in range(3))))
        out.append(best)
    return np.array(out)


# ---------------------------------------------------------------- types

def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_point_cloud_label_count_must_match():
    with pytest.raises(SizeMismatch):
        PointCloud(np.zeros((3, 3)), [1, 2])


def test_rigid_transform_rejects_reflection():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_compose_and_inverse(rng):
    a, b = random_rigid(rng), random_rigid(rng)
    p = rng.normal(size=(10, 3))
    assert np.allclose(a.compose(b).apply_points(p), a.apply_points(b.apply_points(p)))
    assert np.allclose(a.inverse().apply_points(a.apply_points(p)), p)
    assert np.allclose(RigidTransform.from_matrix(a.as_matrix()).rotation, a.rotation)


# ---------------------------------------------------------------- apply_transform

def test_apply_identity_keeps_cloud(rng):
    c = PointCloud(rng.normal(size=(20, 3)), np.arange(20) % 4)
    out = apply_transform(RigidTransform.identity(), c)
    assert np.array_equal(out.points, c.points)
    assert np.array_equal(out.labels, c.labels)


def test_apply_translation():
    out = apply_transform(RigidTransform(np.eye(3), [1, 2, 3]), PointCloud([[0, 0, 0]]))
    assert np.allclose(out.points, [[1, 2, 3]])


def test_apply_rotation_then_translation():
    # hand product: Rz(90) (1,0,0) = (0,1,0), then + (0,0,1)
    t = RigidTransform(rotation_about_axis([0, 0, 1], math.pi / 2), [0, 0, 1])
    out = apply_transform(t, PointCloud([[1, 0, 0]]))
    assert np.allclose(out.points, [[0, 1, 1]], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(clouds, st.integers(0, 2**31))
def test_apply_transform_preserves_distances(pts, seed):
    t = random_rigid(np.random.default_rng(seed))
    c = PointCloud(pts)
    moved = apply_transform(t, c).points
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=2)
    assert np.allclose(d0, d1, atol=1e-9)
    assert len(moved) == len(pts)


# ---------------------------------------------------------------- kabsch

def test_kabsch_identity(rng):
    p = rng.normal(size=(10, 3))
    t = kabsch_fit(p, p)
    assert np.allclose(t.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(t.translation, 0, atol=1e-9)


def test_kabsch_three_points_exact(rng):
    p = np.array([[0.0, 0, 0], [10, 0, 0], [0, 5, 0]])
    t = random_rigid(rng)
    fit = kabsch_fit(p, t.apply_points(p))
    assert np.abs(fit.apply_points(p) - t.apply_points(p)).max() < 1e-9


def test_kabsch_recovers_many_transforms(rng):
    p = rng.uniform(-50, 50, (30, 3))
    for _ in range(100):
        t = random_rigid(rng)
        fit = kabsch_fit(p, t.apply_points(p))
        assert np.linalg.norm(fit.rotation - t.rotation) < 1e-8
        assert np.linalg.norm(fit.translation - t.translation) < 1e-8


def test_kabsch_beats_random_search(rng):
    p = rng.uniform(-20, 20, (15, 3))
    q = random_rigid(rng).apply_points(p) + rng.normal(0, 0.5, p.shape)
    fit = kabsch_fit(p, q)
    best = np.mean(np.sum((fit.apply_points(p) - q) ** 2, axis=1))
    for _ in range(1000):
        t = random_rigid(rng)
        # random rotations, translation chosen optimally for fairness
        rot = t.rotation
        shift = q.mean(axis=0) - p.mean(axis=0) @ rot.T
        trial = np.mean(np.sum((p @ rot.T + shift - q) ** 2, axis=1))
        assert best <= trial + 1e-9


def test_kabsch_handles_reflection_case():
    # a mirrored target forces the sign correction
    p = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    q = p * np.array([1, 1, -1])
    t = kabsch_fit(p, q)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)


def test_kabsch_size_mismatch():
    with pytest.raises(SizeMismatch):
        kabsch_fit(np.zeros((3, 3)), np.zeros((4, 3)))


def test_kabsch_collinear_is_degenerate():
    p = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    with pytest.raises(DegenerateConfiguration):
        kabsch_fit(p, p + 1.0)


def test_batch_kabsch_matches_single(rng):
    src = rng.normal(size=(6, 5, 3))
    dst = np.stack([random_rigid(rng).apply_points(s) for s in src])
    rot, trans = batch_kabsch(src, dst)
    for k in range(6):
        one = kabsch_fit(src[k], dst[k])
        assert np.allclose(rot[k], one.rotation, atol=1e-10)
        assert np.allclose(trans[k], one.translation, atol=1e-10)


# ---------------------------------------------------------------- nearest neighbors

def test_nn_all_sorted(rng):
    ref = rng.normal(size=(12, 3))
    q = np.zeros(3)
    out = nearest_neighbors(q, PointCloud(ref), 12)
    d = np.linalg.norm(ref, axis=1)
    assert [i for i, _ in out] == list(np.argsort(d, kind="stable"))


def test_nn_coincident_first(rng):
    ref = rng.normal(size=(12, 3))
    i, d = nearest_neighbors(ref[5], ref, 1)[0]
    assert (i, d) == (5, 0.0)


def test_nn_matches_full_sort(rng):
    ref = rng.uniform(-10, 10, (200, 3))
    q = rng.uniform(-10, 10, 3)
    full = sorted(range(200), key=lambda i: (float(np.linalg.norm(ref[i] - q)), i))
    assert [i for i, _ in nearest_neighbors(q, ref, 10)] == full[:10]


def test_nn_ties_lower_index():
    ref = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [5, 5, 5]])
    assert [i for i, _ in nearest_neighbors([0, 0, 0], ref, 3)] == [0, 1, 2]
    assert nearest_indices(np.zeros((1, 3)), ref, 3).tolist() == [[0, 1, 2]]


def test_nn_k_too_large():
    with pytest.raises(KTooLarge):
        nearest_neighbors([0, 0, 0], np.zeros((2, 3)), 3)


@settings(max_examples=40, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 30), st.just(3)), elements=st.integers(-3, 3)),
       st.integers(1, 30))
def test_nn_prefix_of_bruteforce(grid_pts, k):
    ref = grid_pts.astype(float)  # integer grid makes ties common
    k = min(k, len(ref))
    q = np.array([0.3, -0.2, 0.1])
    d = np.linalg.norm(ref - q, axis=1)
    oracle = sorted(range(len(ref)), key=lambda i: (d[i], i))
    assert [i for i, _ in nearest_neighbors(q, ref, k)] == oracle[:k]


# ---------------------------------------------------------------- metrics

def test_mean_nn_identity(rng):
    p = rng.normal(size=(30, 3))
    assert mean_nn_distance(p, p).mean == 0.0


def test_mean_nn_single_pair():
    assert mean_nn_distance([[0, 0, 0]], [[3, 4, 0]]).mean == pytest.approx(5.0)


def test_metrics_match_double_loop(rng):
    for _ in range(50):
        a = rng.uniform(-20, 20, (rng.integers(1, 40), 3))
        b = rng.uniform(-20, 20, (rng.integers(1, 40), 3))
        ab, ba = double_loop_nn(a, b), double_loop_nn(b, a)
        stats = mean_nn_distance(a, b)
        assert abs(stats.mean - ab.mean()) <= 1e-12
        assert abs(stats.std - ab.std()) <= 1e-12
        assert abs(hausdorff_distance(a, b) - max(ab.max(), ba.max())) <= 1e-12


def test_hausdorff_hand_value():
    assert hausdorff_distance([[0, 0, 0]], [[1, 0, 0], [9, 0, 0]]) == pytest.approx(9.0)


def test_metrics_empty():
    with pytest.raises(EmptyCloud):
        mean_nn_distance(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(EmptyCloud):
        hausdorff_distance(np.zeros((2, 3)), np.zeros((0, 3)))


@settings(max_examples=50, deadline=None)
@given(clouds, clouds)
def test_hausdorff_properties(a, b):
    h = hausdorff_distance(a, b)
    assert h == hausdorff_distance(b, a)
    assert hausdorff_distance(a, a) == 0.0
    assert h >= mean_nn_distance(a, b).mean - 1e-12
    assert h >= mean_nn_distance(b, a).mean - 1e-12


# ---------------------------------------------------------------- downsample

def test_downsample_full_count_is_permutation(rng):
    c = PointCloud(rng.normal(size=(50, 3)))
    out = downsample(c, 50, seed=3)
    assert sorted(map(tuple, out.points)) == sorted(map(tuple, c.points))


def test_downsample_segment_spacing(rng):
    x = rng.uniform(0, 100, 1000)
    c = PointCloud(np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=1))
    out = downsample(c, 10, seed=0)
    assert len(out) == 10
    xs = np.sort(out.points[:, 0])
    assert np.diff(xs).min() >= 5.0


def test_downsample_spacing_bound(rng):
    c = PointCloud(rng.uniform(0, 40, (2000, 3)))
    out = downsample(c, 200, seed=1)
    d = np.linalg.norm(out.points[:, None] - out.points[None], axis=2)
    d[np.diag_indices(len(out))] = np.inf
    assert d.min() >= 0.5 * ideal_spacing(c.points, 200)


def test_downsample_deterministic(rng):
    c = PointCloud(rng.normal(size=(300, 3)))
    assert np.array_equal(downsample(c, 40, 7).points, downsample(c, 40, 7).points)


def test_downsample_duplicates_terminate():
    c = PointCloud(np.zeros((20, 3)))
    assert len(downsample(c, 5)) == 5


def test_downsample_too_large():
    with pytest.raises(TargetTooLarge):
        downsample(PointCloud(np.zeros((3, 3))), 4)
