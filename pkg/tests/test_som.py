import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skelreg.errors import DegenerateCloud, EmptyCloud
from skelreg.geometry import PointCloud
from skelreg.som import (
    SomGrid, SomParams, extract_key_points, init_grid, live_nodes, quantization_error, train,
)


def reference_train(weights, data, params, n_epochs):
    """Plain-loop trainer: Gaussian lattice neighborhood, exponential decays."""
    rows, cols = weights.shape[:2]
    grid = SomGrid(rows, cols, weights)
    lr0, tau_l, sigma0, tau_s = params.schedule(grid, len(data))
    w = weights.reshape(-1, 3).copy()
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    rng = np.random.default_rng(params.seed)
    i = 0
    for _ in range(n_epochs):
        for k in rng.permutation(len(data)):
            p = data[k]
            bmu = int(np.argmin(((w - p) ** 2).sum(axis=1)))
            g2 = (rr - rr[bmu]) ** 2 + (cc - cc[bmu]) ** 2
            sigma = sigma0 * math.exp(-i / tau_s)
            theta = np.exp(-g2 / (2 * sigma * sigma))
            w += (theta * lr0 * math.exp(-i / tau_l))[:, None] * (p - w)
            i += 1
    return w.reshape(rows, cols, 3)


def test_matches_reference_trainer(rng):
    data = rng.normal(size=(40, 3)) * [10, 5, 1]
    grid = init_grid(PointCloud(data), 3, 4)
    params = SomParams(epochs=3, seed=5)
    out = train(grid, PointCloud(data), params)
    assert np.allclose(out.weights, reference_train(grid.weights, data, params, 3), atol=1e-12)


def test_init_on_plane():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-20, 20, 60), rng.uniform(-5, 5, 60), np.full(60, 7.0)])
    g = init_grid(PointCloud(pts), 5, 8)
    assert np.allclose(g.weights[..., 2], pts[:, 2].mean())
    # longer grid dimension follows the widest spread
    assert np.ptp(g.weights[..., 0]) > np.ptp(g.weights[..., 1])
    row_step = g.weights[0, 1] - g.weights[0, 0]
    assert abs(row_step[0]) > abs(row_step[1])


def test_init_spans_two_std():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.normal(0, 10, 500), rng.normal(0, 3, 500), rng.normal(0, 0.1, 500)])
    g = init_grid(PointCloud(pts), 4, 9)
    centered = pts - pts.mean(axis=0)
    sd = np.linalg.svd(centered, compute_uv=False) / math.sqrt(len(pts))
    assert np.linalg.norm(g.weights[0, -1] - g.weights[0, 0]) == pytest.approx(4 * sd[0])
    assert np.linalg.norm(g.weights[-1, 0] - g.weights[0, 0]) == pytest.approx(4 * sd[1])


def test_init_single_node_centroid(rng):
    pts = rng.normal(size=(30, 3))
    g = init_grid(PointCloud(pts), 1, 1)
    assert np.allclose(g.weights[0, 0], pts.mean(axis=0))


def test_init_deterministic(rng):
    c = PointCloud(rng.normal(size=(50, 3)))
    assert np.array_equal(init_grid(c, 5, 8, 1).weights, init_grid(c, 5, 8, 1).weights)


def test_init_degenerate():
    with pytest.raises(DegenerateCloud):
        init_grid(PointCloud(np.ones((10, 3))), 3, 3)
    with pytest.raises(EmptyCloud):
        init_grid(PointCloud(np.zeros((0, 3))), 3, 3)


def test_single_attractor():
    p = np.array([3.0, -2.0, 5.0])
    cloud = PointCloud(np.tile(p, (50, 1)))
    start = init_grid(PointCloud(np.random.default_rng(0).normal(size=(20, 3)) * 10 + p), 5, 8)
    out = train(start, cloud, SomParams())
    assert np.abs(out.weights - p).max() < 1e-3


def test_one_node_tracks_centroid():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(100, 3))
    pts = 10.0 * v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(0, 1, (100, 1)) ** (1 / 3)
    out = train(init_grid(PointCloud(pts), 1, 1), PointCloud(pts), SomParams(epochs=200))
    assert np.linalg.norm(out.weights[0, 0] - pts.mean(axis=0)) < 1.0


def test_unit_step_lands_on_sample():
    # theta = 1 at the BMU and lr = 1 on the first step
    g = SomGrid(2, 2, np.arange(12, dtype=float).reshape(2, 2, 3))
    p = np.array([[0.5, 1.2, 1.9]])
    out = train(g, PointCloud(p), SomParams(learning_rate=1.0, epochs=1))
    assert np.array_equal(out.weights[0, 0], p[0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_update_moves_toward_sample(seed, lr):
    rng = np.random.default_rng(seed)
    w0 = rng.normal(size=(3, 4, 3)) * 5
    p = rng.normal(size=3)
    out = train(SomGrid(3, 4, w0), PointCloud(p[None]), SomParams(learning_rate=lr, epochs=1))
    step = out.weights - w0
    gap = p - w0
    # each weight moves along its segment toward the sample, never past it
    assert np.all(np.linalg.norm(step, axis=2) <= np.linalg.norm(gap, axis=2) + 1e-12)
    cross = np.linalg.norm(np.cross(step, gap), axis=2)
    assert np.all(cross <= 1e-9 * (1 + np.linalg.norm(gap, axis=2) ** 2))


def test_training_deterministic(cage):
    cloud = cage[0]
    g = init_grid(cloud, 5, 8)
    params = SomParams(epochs=20, seed=4)
    assert np.array_equal(train(g, cloud, params).weights, train(g, cloud, params).weights)


def test_quantization_error_halves_on_cage(cage):
    cloud = cage[0]
    g = init_grid(cloud, 20, 20)
    out = train(g, cloud, SomParams(epochs=200))
    assert quantization_error(out, cloud) <= 0.5 * quantization_error(g, cloud)


def test_quantization_error_settles_monotonically(cage):
    cloud = cage[0]
    out = train(init_grid(cloud, 20, 20), cloud, SomParams(epochs=200), record_error=True)
    tail = np.asarray(out.error_history[-11:])
    assert len(out.error_history) == 201
    assert np.sum(np.diff(tail) > 0) <= 1


@pytest.mark.parametrize("shape,count", [((5, 8), 40), ((20, 20), 400), ((1, 1), 1)])
def test_extract_key_points_counts(shape, count):
    g = SomGrid(*shape, np.zeros(shape + (3,)))
    assert len(extract_key_points(g)) == count


def test_extract_row_major():
    w = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3)
    assert np.array_equal(extract_key_points(SomGrid(2, 3, w)).points[4], w[1, 1])


def test_live_nodes_drops_unused():
    nodes = PointCloud([[0, 0, 0], [100, 0, 0], [10, 0, 0]])
    data = PointCloud([[1, 0, 0], [9, 0, 0], [11, 0, 0]])
    assert live_nodes(nodes, data).tolist() == [0, 2]


def test_params_validation():
    with pytest.raises(ValueError):
        SomParams(learning_rate=0.0)
    with pytest.raises(ValueError):
        SomParams(epochs=0)
    with pytest.raises(ValueError):
        SomParams(sigma0=-1.0)


def test_schedule_reaches_finals():
    g = SomGrid(5, 8, np.zeros((5, 8, 3)))
    p = SomParams(epochs=10)
    lr0, tau_l, s0, tau_s = p.schedule(g, 100)
    assert s0 == 4.0
    assert lr0 * math.exp(-1000 / tau_l) == pytest.approx(p.learning_rate_final)
    assert s0 * math.exp(-1000 / tau_s) == pytest.approx(p.sigma_final)
