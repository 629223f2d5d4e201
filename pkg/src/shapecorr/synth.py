"""Deterministic synthetic shape collections with exact ground-truth correspondence.

All generators are pure functions of their arguments, so a spec list plus
seeds reproduces a collection bit for bit.
"""

import numpy as np

from .mesh import TriMesh, MeshError
from .evaluation import GroundTruth

DEFORM_KINDS = ("AnisotropicScale", "RadialBumps", "VertexPermutation", "RigidMotion")

# golden ratio icosahedron, unit-sphere projected in make_icosphere
_PHI = (1.0 + 5.0 ** 0.5) / 2.0
_ICO_VERTS = np.array(
    [
        (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
        (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
        (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
    ],
    dtype=np.float64,
)
_ICO_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


class DeformSpec:
    """Deformation request: kind, magnitude, and seed for any randomness."""

    def __init__(self, kind, magnitude=0.0, seed=0):
        if kind not in DEFORM_KINDS:
            raise ValueError(f"unknown deformation kind {kind!r}")
        self.kind = kind
        self.magnitude = float(magnitude)
        self.seed = int(seed)


def make_icosphere(subdiv, name=None):
    """Unit-radius icosphere by midpoint subdivision of the icosahedron.

    Vertex count is 10 * 4**subdiv + 2 and the vertex order is deterministic:
    the 12 icosahedron vertices first, then midpoints in edge-discovery order
    per subdivision level.
    """
    subdiv = int(subdiv)
    if subdiv < 0 or subdiv > 6:
        raise ValueError("subdiv must be in [0, 6]")
    verts = _ICO_VERTS / np.linalg.norm(_ICO_VERTS[0])
    faces = _ICO_FACES.copy()
    for _ in range(subdiv):
        verts, faces = _midpoint_subdivide(verts, faces)
    verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    if name is None:
        name = f"icosphere{subdiv}"
    return TriMesh(verts, faces, name=name)


def _midpoint_subdivide(verts, faces):
    verts = list(map(np.asarray, verts))
    cache = {}

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            m = (verts[a] + verts[b]) / 2.0
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    new_faces = []
    for (a, b, c) in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
    return np.array(verts), np.array(new_faces, dtype=np.int64)


def vertex_normals(mesh):
    """Area-weighted vertex normals (unit length)."""
    v, t = mesh.vertices, mesh.triangles
    face_n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n = np.zeros_like(v)
    for c in range(3):
        np.add.at(n, t[:, c], face_n)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return n / norms


def deform(mesh, spec, name=None):
    """Apply a deformation, returning (deformed mesh, exact ground truth).

    Connectivity is preserved. The ground truth maps each vertex of the
    input mesh to its counterpart in the output (identity except for
    VertexPermutation, which returns the permutation). Raises MeshError
    if the deformation flips or collapses a triangle.
    """
    rng = np.random.default_rng(spec.seed)
    v = mesh.vertices
    m = spec.magnitude
    if spec.kind == "AnisotropicScale":
        new_v = v * np.array([1.0 + m, 1.0, 1.0 / (1.0 + m)])
        tris = mesh.triangles
        gt = np.arange(mesh.n_vertices)
    elif spec.kind == "RadialBumps":
        new_v = v + (m * _bump_field(mesh, rng))[:, None] * vertex_normals(mesh)
        tris = mesh.triangles
        gt = np.arange(mesh.n_vertices)
    elif spec.kind == "RigidMotion":
        q = rng.standard_normal(4)
        rot = _quat_to_rotation(q / np.linalg.norm(q))
        shift = rng.standard_normal(3)
        new_v = v @ rot.T + shift
        tris = mesh.triangles
        gt = np.arange(mesh.n_vertices)
    elif spec.kind == "VertexPermutation":
        perm = rng.permutation(mesh.n_vertices)
        new_v = np.empty_like(v)
        new_v[perm] = v
        tris = perm[mesh.triangles]
        gt = perm
    else:  # pragma: no cover - guarded by DeformSpec
        raise ValueError(spec.kind)

    out = TriMesh(new_v, tris, name=name or f"{mesh.name}-{spec.kind.lower()}",
                  validate=False)
    _check_no_flips(mesh, out, spec)
    return out, GroundTruth(gt, n_target=out.n_vertices)


def _bump_field(mesh, rng, n_lobes=3, width=0.6):
    # smooth sum of Gaussian lobes in the angle to seeded unit directions
    dirs = rng.standard_normal((n_lobes, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radial = mesh.vertices / np.linalg.norm(mesh.vertices, axis=1, keepdims=True)
    ang = np.arccos(np.clip(radial @ dirs.T, -1.0, 1.0))
    return np.exp(-(ang ** 2) / (2.0 * width ** 2)).sum(axis=1)


def _quat_to_rotation(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _check_no_flips(before, after, spec):
    vb, va = before.vertices, after.vertices
    tb, ta = before.triangles, after.triangles
    nb = np.cross(vb[tb[:, 1]] - vb[tb[:, 0]], vb[tb[:, 2]] - vb[tb[:, 0]])
    na = np.cross(va[ta[:, 1]] - va[ta[:, 0]], va[ta[:, 2]] - va[ta[:, 0]])
    areas = 0.5 * np.linalg.norm(na, axis=1)
    if areas.min() <= 0.0:
        raise MeshError(
            f"{spec.kind} magnitude {spec.magnitude} collapses a triangle; lower the magnitude"
        )
    if spec.kind in ("AnisotropicScale", "RadialBumps"):
        if (np.sum(nb * na, axis=1) <= 0.0).any():
            raise MeshError(
                f"{spec.kind} magnitude {spec.magnitude} flips a triangle; lower the magnitude"
            )


def default_collection(subdiv=3):
    """The six-shape acceptance collection.

    icosphere + two radial-bump variants + two anisotropic scalings + one
    vertex-permuted copy of the first bump shape, all with exact ground
    truth to the base shape they derive from. Returns a list of
    (shape_id, TriMesh, base_id, GroundTruth-from-base) tuples; the base
    icosphere carries (None, None).
    """
    sphere = make_icosphere(subdiv, name="sphere")
    bump_a, gt_ba = deform(sphere, DeformSpec("RadialBumps", 0.25, seed=11), name="bumpA")
    bump_b, gt_bb = deform(sphere, DeformSpec("RadialBumps", 0.35, seed=12), name="bumpB")
    aniso_a, gt_aa = deform(sphere, DeformSpec("AnisotropicScale", 0.3), name="anisoA")
    aniso_b, gt_ab = deform(sphere, DeformSpec("AnisotropicScale", 0.5), name="anisoB")
    perm_a, gt_pa = deform(bump_a, DeformSpec("VertexPermutation", seed=13), name="permA")
    return [
        ("sphere", sphere, None, None),
        ("bumpA", bump_a, "sphere", gt_ba),
        ("bumpB", bump_b, "sphere", gt_bb),
        ("anisoA", aniso_a, "sphere", gt_aa),
        ("anisoB", aniso_b, "sphere", gt_ab),
        ("permA", perm_a, "bumpA", gt_pa),
    ]
