import numpy as np
import pytest

from shapecorr import (
    GroundTruth, PointMap, accuracy_curve, geodesic_distances, geodesic_error,
    make_icosphere, normalize_area,
)


@pytest.fixture(scope="module")
def unit_sphere():
    return normalize_area(make_icosphere(2))


def test_exact_prediction_gives_zero(unit_sphere):
    n = unit_sphere.n_vertices
    gt = GroundTruth(np.arange(n), n_target=n)
    pred = PointMap(np.arange(n), n_to=n)
    mean, per_vertex = geodesic_error(pred, gt, unit_sphere)
    assert mean == 0.0
    assert not per_vertex.any()


def test_one_edge_perturbation(unit_sphere):
    n = unit_sphere.n_vertices
    adj = unit_sphere.vertex_adjacency()
    neighbor = np.array([adj.indices[adj.indptr[v]] for v in range(n)])
    gt = GroundTruth(np.arange(n), n_target=n)
    pred = PointMap(neighbor, n_to=n)
    mean, per_vertex = geodesic_error(pred, gt, unit_sphere)
    edge_lengths = np.linalg.norm(
        unit_sphere.vertices[neighbor] - unit_sphere.vertices, axis=1
    )
    assert np.allclose(per_vertex, edge_lengths, rtol=1e-12)
    assert mean == pytest.approx(100.0 * edge_lengths.mean(), rel=1e-12)


def test_constant_prediction_oracle(unit_sphere):
    n = unit_sphere.n_vertices
    v = 17
    gt = GroundTruth(np.arange(n), n_target=n)
    pred = PointMap(np.full(n, v), n_to=n)
    mean, _ = geodesic_error(pred, gt, unit_sphere)
    oracle = geodesic_distances(unit_sphere, v).mean()
    assert mean == pytest.approx(100.0 * oracle, rel=1e-12)


def test_masked_vertices_skipped(unit_sphere):
    n = unit_sphere.n_vertices
    rng = np.random.default_rng(0)
    mask = rng.random(n) > 0.5
    scrambled = np.arange(n)
    scrambled[~mask] = (scrambled[~mask] + 7) % n  # wrong only where masked out
    gt = GroundTruth(np.arange(n), n_target=n, mask=mask)
    pred = PointMap(scrambled, n_to=n)
    mean, per_vertex = geodesic_error(pred, gt, unit_sphere)
    assert mean == 0.0
    assert per_vertex.shape[0] == int(mask.sum())


def test_unnormalized_mesh_rejected():
    sphere = make_icosphere(1)  # area ~ 4 pi
    n = sphere.n_vertices
    gt = GroundTruth(np.arange(n), n_target=n)
    pred = PointMap(np.arange(n), n_to=n)
    with pytest.raises(ValueError, match="normalize"):
        geodesic_error(pred, gt, sphere)


def test_joint_source_permutation_invariance(unit_sphere):
    n = unit_sphere.n_vertices
    rng = np.random.default_rng(1)
    target = rng.integers(0, n, n)
    pred_vals = rng.integers(0, n, n)
    gt = GroundTruth(target, n_target=n)
    pred = PointMap(pred_vals, n_to=n)
    base, _ = geodesic_error(pred, gt, unit_sphere)
    perm = rng.permutation(n)
    gt_p = GroundTruth(target[perm], n_target=n)
    pred_p = PointMap(pred_vals[perm], n_to=n)
    permuted, _ = geodesic_error(pred_p, gt_p, unit_sphere)
    assert base == pytest.approx(permuted, rel=1e-12)


def test_rigid_motion_invariance(unit_sphere):
    n = unit_sphere.n_vertices
    rng = np.random.default_rng(2)
    rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    moved = unit_sphere.with_vertices(unit_sphere.vertices @ rot.T + 4.0,
                                      validate=False)
    gt = GroundTruth(rng.integers(0, n, n), n_target=n)
    pred = PointMap(rng.integers(0, n, n), n_to=n)
    a, _ = geodesic_error(pred, gt, unit_sphere)
    b, _ = geodesic_error(pred, gt, moved)
    assert a == pytest.approx(b, rel=1e-9)


def test_accuracy_curve_cases():
    assert np.allclose(accuracy_curve(np.zeros(5), [0.1, 1.0]), 1.0)
    curve = accuracy_curve([0.1, 0.3], [0.2, 0.4])
    assert np.allclose(curve, [0.5, 1.0])
    assert accuracy_curve([0.5], []).size == 0
    with pytest.raises(ValueError):
        accuracy_curve([0.1], [0.4, 0.2])
    full = accuracy_curve(np.random.default_rng(3).random(100), [np.inf])
    assert full[0] == 1.0


def test_accuracy_curve_monotone():
    rng = np.random.default_rng(4)
    errors = rng.random(500)
    thresholds = np.sort(rng.random(50))
    curve = accuracy_curve(errors, thresholds)
    assert (np.diff(curve) >= 0).all()
    assert ((curve >= 0) & (curve <= 1)).all()
