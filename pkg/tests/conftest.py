import numpy as np
import pytest

from shapecorr import (
    DeformSpec, Shape, compute_basis, deform, make_icosphere, normalize_area,
    wks,
)

TETRA_VERTS = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]
) / (2.0 * np.sqrt(2.0))  # unit edge length
TETRA_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


@pytest.fixture(scope="session")
def tetra():
    from shapecorr import TriMesh

    return TriMesh(TETRA_VERTS, TETRA_FACES, name="tetra")


@pytest.fixture(scope="session")
def sphere2():
    return make_icosphere(2)


@pytest.fixture(scope="session")
def bump2():
    mesh, _ = deform(make_icosphere(2), DeformSpec("RadialBumps", 0.3, seed=5))
    return normalize_area(mesh)


@pytest.fixture(scope="session")
def bump2_basis(bump2):
    return compute_basis(bump2, 12)


@pytest.fixture(scope="session")
def bump2_shape(bump2, bump2_basis):
    return Shape("bump2", bump2, bump2_basis, wks(bump2_basis, 16))


@pytest.fixture(scope="session")
def perm_pair():
    """Bumped sphere, a vertex-permuted copy, and the permutation ground truth."""
    base, _ = deform(make_icosphere(2), DeformSpec("RadialBumps", 0.3, seed=5))
    base = normalize_area(base)
    permuted, gt = deform(base, DeformSpec("VertexPermutation", seed=13))
    return base, permuted, gt
