import numpy as np
import pytest

from shapecorr import (
    CoeffMatrix, FunctionalMap, PointMap, functional_cycle_residual_on_a,
    sample_triplets, spatial_cycle_deviation, spectral_cycle_residual,
)


def _map_grid(n, k, builder):
    return {
        (i, j): FunctionalMap(builder(i, j), source_id=str(i), target_id=str(j))
        for i in range(n) for j in range(n) if i != j
    }


def test_sample_triplets_properties():
    tri = sample_triplets(6, 1000, seed=3)
    assert len(tri) == 1000
    t = tri.triplets
    assert (t >= 0).all() and (t < 6).all()
    assert (t[:, 0] != t[:, 1]).all()
    assert (t[:, 1] != t[:, 2]).all()
    assert (t[:, 0] != t[:, 2]).all()
    again = sample_triplets(6, 1000, seed=3)
    assert np.array_equal(tri.triplets, again.triplets)
    with pytest.raises(ValueError):
        sample_triplets(2, 10, seed=0)


def test_sample_triplets_support():
    tri = sample_triplets(3, 600, seed=1)
    seen = {tuple(row) for row in tri.triplets}
    assert seen == {(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)}


def test_spectral_residual_identity_maps():
    maps = _map_grid(5, 4, lambda i, j: np.eye(4))
    tri = sample_triplets(5, 200, seed=0)
    assert spectral_cycle_residual(maps, tri) == 0.0


def test_spectral_residual_telescoping():
    rng = np.random.default_rng(5)
    k, n = 6, 5
    q = [np.linalg.qr(rng.standard_normal((k, k)))[0] + 0.1 * np.eye(k)
         for _ in range(n)]
    maps = _map_grid(n, k, lambda i, j: q[j] @ np.linalg.inv(q[i]))
    tri = sample_triplets(n, 500, seed=1)
    assert spectral_cycle_residual(maps, tri) < 1e-10


def test_spectral_residual_single_bad_map():
    k, n = 2, 4
    maps = _map_grid(n, k, lambda i, j: np.eye(k))
    maps[(0, 1)] = FunctionalMap(2.0 * np.eye(k), source_id="0", target_id="1")
    tri = sample_triplets(n, 400, seed=2)
    _, vals = spectral_cycle_residual(maps, tri, per_triplet=True)
    uses_bad = np.array(
        [(i, j) == (0, 1) or (j, l) == (0, 1) or (l, i) == (0, 1)
         for (i, j, l) in tri.triplets]
    )
    # each affected triplet contributes ||2I - I||^2 / k = 1
    assert np.allclose(vals[uses_bad], 1.0)
    assert np.allclose(vals[~uses_bad], 0.0)


def test_spectral_residual_missing_map():
    maps = _map_grid(4, 3, lambda i, j: np.eye(3))
    del maps[(1, 2)]
    tri = sample_triplets(4, 300, seed=4)
    with pytest.raises(KeyError, match=r"\(1, 2\)"):
        spectral_cycle_residual(maps, tri)


def test_spectral_residual_conjugation_invariance():
    rng = np.random.default_rng(6)
    k, n = 5, 4
    base = {
        (i, j): rng.standard_normal((k, k)) for i in range(n) for j in range(n)
        if i != j
    }
    rot, _ = np.linalg.qr(rng.standard_normal((k, k)))
    maps = _map_grid(n, k, lambda i, j: base[(i, j)])
    conj = _map_grid(n, k, lambda i, j: rot @ base[(i, j)] @ rot.T)
    tri = sample_triplets(n, 200, seed=5)
    assert spectral_cycle_residual(maps, tri) == pytest.approx(
        spectral_cycle_residual(conj, tri), rel=1e-10
    )


def test_functional_residual_telescoping_construction():
    rng = np.random.default_rng(7)
    k, d, n = 5, 9, 6
    a0 = rng.standard_normal((k, d))
    q = [np.linalg.qr(rng.standard_normal((k, k)))[0] @ np.diag(1.0 + 0.3 * rng.random(k))
         for _ in range(n)]
    coeffs = {i: CoeffMatrix(q[i] @ a0, shape_id=str(i)) for i in range(n)}
    maps = _map_grid(n, k, lambda i, j: q[j] @ np.linalg.inv(q[i]))
    tri = sample_triplets(n, 500, seed=6)
    assert functional_cycle_residual_on_a(maps, coeffs, tri) < 1e-10
    assert spectral_cycle_residual(maps, tri) < 1e-10


def test_functional_residual_all_identity():
    k, d, n = 4, 7, 4
    a = CoeffMatrix(np.random.default_rng(8).standard_normal((k, d)))
    coeffs = {i: a for i in range(n)}
    maps = _map_grid(n, k, lambda i, j: np.eye(k))
    tri = sample_triplets(n, 100, seed=7)
    assert functional_cycle_residual_on_a(maps, coeffs, tri) == 0.0


def test_functional_residual_rank_deficiency_caveat():
    # C_cycle = I + v w^T with w^T A = 0: invisible on the span of A,
    # visible to the raw spectral residual
    rng = np.random.default_rng(9)
    k, d, n = 4, 6, 3
    w = np.zeros(k)
    w[-1] = 1.0
    a_vals = rng.standard_normal((k, d))
    a_vals[-1] = 0.0  # rank-deficient: last row zero
    coeffs = {i: CoeffMatrix(a_vals) for i in range(n)}
    v = rng.standard_normal(k)
    bad = np.eye(k) + np.outer(v, w)
    maps = _map_grid(n, k, lambda i, j: np.eye(k))
    maps[(0, 1)] = FunctionalMap(bad, source_id="0", target_id="1")
    tri = sample_triplets(n, 200, seed=8)
    func = functional_cycle_residual_on_a(maps, coeffs, tri)
    spec = spectral_cycle_residual(maps, tri)
    assert func < 1e-12
    assert spec > 1e-3


def test_spatial_deviation_identity(bump2):
    n = bump2.n_vertices
    meshes = {i: bump2 for i in range(3)}
    pmaps = {
        (i, j): PointMap(np.arange(n), n_to=n, from_id=str(i), to_id=str(j))
        for i in range(3) for j in range(3) if i != j
    }
    tri = sample_triplets(3, 50, seed=9)
    assert spatial_cycle_deviation(pmaps, meshes, tri) == 0.0


def test_spatial_deviation_exact_permutations(bump2):
    from shapecorr import DeformSpec, deform

    meshes = {0: bump2}
    perms = {0: np.arange(bump2.n_vertices)}
    for idx, seed in ((1, 31), (2, 32)):
        m, gt = deform(bump2, DeformSpec("VertexPermutation", seed=seed))
        meshes[idx] = m
        perms[idx] = gt.assignment
    n = bump2.n_vertices
    pmaps = {}
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            to_j = perms[j][np.argsort(perms[i])]
            pmaps[(i, j)] = PointMap(to_j, n_to=n, from_id=str(i), to_id=str(j))
    tri = sample_triplets(3, 100, seed=10)
    assert spatial_cycle_deviation(pmaps, meshes, tri) == 0.0


def test_spatial_deviation_one_ring_perturbation(bump2):
    n = bump2.n_vertices
    # map 0->1 sends each vertex to a neighbor; the others are identity
    adj = bump2.vertex_adjacency()
    neighbor = np.array(adj.indptr[:-1], dtype=np.int64)
    neighbor = np.array([adj.indices[adj.indptr[v]] for v in range(n)])
    meshes = {i: bump2 for i in range(3)}
    pmaps = {
        (i, j): PointMap(np.arange(n), n_to=n, from_id=str(i), to_id=str(j))
        for i in range(3) for j in range(3) if i != j
    }
    pmaps[(0, 1)] = PointMap(neighbor, n_to=n, from_id="0", to_id="1")
    tri = sample_triplets(3, 300, seed=11)
    mean, vals = spatial_cycle_deviation(pmaps, meshes, tri, per_triplet=True)
    edge_lengths = np.linalg.norm(bump2.vertices[neighbor] - bump2.vertices, axis=1)
    affected = np.array([0 in (i, j, l) and (i, j) != (l, i) and
                         ((i, j) == (0, 1) or (j, l) == (0, 1) or (l, i) == (0, 1))
                         for (i, j, l) in tri.triplets])
    assert np.allclose(vals[affected], edge_lengths.mean(), rtol=1e-12)
    assert np.allclose(vals[~affected], 0.0)


def test_spatial_deviation_direction_mismatch(bump2):
    n = bump2.n_vertices
    pmaps = {
        (i, j): PointMap(np.arange(n), n_to=n, from_id="x", to_id="y")
        for i in range(3) for j in range(3) if i != j
    }
    tri = sample_triplets(3, 10, seed=12)
    with pytest.raises(ValueError, match="compose"):
        spatial_cycle_deviation(pmaps, {i: bump2 for i in range(3)}, tri)


def test_prop1_empirical_bound():
    # noisy shared-column-space collections: residual stays within a modest
    # multiple of eps / s across three orders of perturbation magnitude
    from shapecorr import solve_fmreg

    rng = np.random.default_rng(13)
    k, d, n = 5, 10, 4
    a0 = rng.standard_normal((k, d))
    q = [np.linalg.qr(rng.standard_normal((k, k)))[0] @ np.diag(1.0 + 0.2 * rng.random(k))
         for _ in range(n)]
    lam = np.linspace(0.0, 3.0, k)
    tri = sample_triplets(n, 200, seed=13)
    ratios = []
    for eta in (1e-8, 1e-6, 1e-4):
        coeffs = {
            i: CoeffMatrix(q[i] @ a0 + eta * rng.standard_normal((k, d)), shape_id=str(i))
            for i in range(n)
        }
        maps = {}
        eps = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    c, _ = solve_fmreg(coeffs[i], coeffs[j], lam, lam, lam=0.0)
                    maps[(i, j)] = c
                    from shapecorr import loss_descriptor

                    eps = max(eps, np.sqrt(loss_descriptor(c, coeffs[i], coeffs[j])))
        s_min = min(np.linalg.svd(coeffs[i].values, compute_uv=False)[-1]
                    for i in range(n))
        resid = functional_cycle_residual_on_a(maps, coeffs, tri)
        ratios.append(resid / (eps / s_min))
    assert max(ratios) < 20.0
