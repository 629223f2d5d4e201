"""Triangle mesh data model: loading, validation, normalization, sampling, geodesics.

Vertex order is preserved exactly through load/save because all correspondence
data (point maps, ground truth) is index-based.
"""

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class MeshError(Exception):
    """Base class for mesh construction and validation failures."""


class MeshParseError(MeshError):
    """Unreadable or malformed OFF/OBJ content."""


class DegenerateTriangleError(MeshError):
    """Triangle with (near-)zero area or repeated vertex indices."""


class NonManifoldError(MeshError):
    """An edge is shared by more than two triangles."""


class DisconnectedMeshError(MeshError):
    """Mesh has more than one connected component (or isolated vertices)."""


class TriMesh:
    """Immutable triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions.
    triangles : (m, 3) array_like
        0-based vertex index triples.
    name : str
        Identifier used in file headers and map metadata.
    validate : bool
        Run full validation (index bounds, degeneracy, manifoldness,
        connectivity). Construction fails with a specific MeshError
        subclass on violation.
    """

    def __init__(self, vertices, triangles, name="mesh", validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.name = str(name)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise MeshParseError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshParseError(f"triangles must be (m, 3), got {self.triangles.shape}")
        if validate:
            self._validate()

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def _validate(self):
        n = self.n_vertices
        t = self.triangles
        if t.size == 0:
            raise MeshParseError("mesh has no triangles")
        if t.min() < 0 or t.max() >= n:
            raise MeshParseError(
                f"triangle index out of range: max index {t.max()}, {n} vertices"
            )
        repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
        if repeated.any():
            raise DegenerateTriangleError(
                f"triangle {int(np.nonzero(repeated)[0][0])} repeats a vertex index"
            )
        areas = self.triangle_areas()
        scale = float(np.abs(self.vertices).max()) or 1.0
        tiny = areas < 1e-14 * scale * scale
        if tiny.any():
            raise DegenerateTriangleError(
                f"triangle {int(np.nonzero(tiny)[0][0])} has (near-)zero area"
            )
        # edge-manifold: every undirected edge in at most 2 triangles
        e = np.sort(
            np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1
        )
        keys = e[:, 0] * n + e[:, 1]
        _, counts = np.unique(keys, return_counts=True)
        if (counts > 2).any():
            raise NonManifoldError("an edge is shared by more than two triangles")
        adj = self.vertex_adjacency()
        n_comp, _ = csgraph.connected_components(adj, directed=False)
        # vertices referenced by no triangle come out as singleton components
        if n_comp != 1:
            raise DisconnectedMeshError(f"mesh has {n_comp} connected components")

    def triangle_areas(self):
        """Per-triangle areas, shape (m,)."""
        v = self.vertices
        t = self.triangles
        cr = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def total_area(self):
        return float(self.triangle_areas().sum())

    def edges(self):
        """Unique undirected edges as an (e, 2) int array, each row sorted."""
        t = self.triangles
        e = np.sort(
            np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1
        )
        return np.unique(e, axis=0)

    def vertex_adjacency(self):
        """Symmetric sparse adjacency with Euclidean edge lengths as weights."""
        e = self.edges()
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        n = self.n_vertices
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        data = np.concatenate([w, w])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def with_vertices(self, vertices, name=None, validate=True):
        """Copy with replaced vertex positions (same connectivity)."""
        return TriMesh(
            vertices, self.triangles, name=self.name if name is None else name,
            validate=validate,
        )


class SampleSet:
    """Vertex sample produced by farthest-point sampling.

    Attributes
    ----------
    indices : (count,) int array of unique vertex indices
    method : str, currently always "FPS"
    seed : int seed that selected the starting vertex
    """

    def __init__(self, indices, method="FPS", seed=0):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.method = method
        self.seed = int(seed)
        if len(np.unique(self.indices)) != len(self.indices):
            raise ValueError("sample indices must be unique")


def load_mesh(path):
    """Load a validated TriMesh from an ASCII OFF or OBJ file.

    File vertex order is preserved exactly. The format is chosen by
    extension (.off / .obj), falling back to sniffing the first token.

    Raises
    ------
    MeshParseError, DegenerateTriangleError, NonManifoldError,
    DisconnectedMeshError
    """
    path = str(path)
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as exc:
        raise MeshParseError(f"cannot read {path}: {exc}") from exc
    lower = path.lower()
    if lower.endswith(".off"):
        verts, tris, name = _parse_off(text)
    elif lower.endswith(".obj"):
        verts, tris, name = _parse_obj(text)
    elif text.lstrip().startswith("OFF"):
        verts, tris, name = _parse_off(text)
    else:
        verts, tris, name = _parse_obj(text)
    if name is None:
        name = path.rsplit("/", 1)[-1].rsplit(".", 1)[0]
    return TriMesh(verts, tris, name=name)


def _parse_off(text):
    lines = [
        ln.strip() for ln in text.splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if not lines:
        raise MeshParseError("empty OFF file")
    header = lines[0]
    if header.startswith("OFF"):
        rest = header[3:].strip()
        body = lines[1:]
        if rest:  # counts on the same line as the magic
            body = [rest] + body
    else:
        raise MeshParseError("missing OFF header")
    try:
        nv, nf = int(body[0].split()[0]), int(body[0].split()[1])
    except (IndexError, ValueError) as exc:
        raise MeshParseError("malformed OFF count line") from exc
    if len(body) < 1 + nv + nf:
        raise MeshParseError("truncated OFF file")
    try:
        verts = np.array(
            [[float(x) for x in body[1 + i].split()[:3]] for i in range(nv)]
        )
        tris = []
        for i in range(nf):
            parts = body[1 + nv + i].split()
            cnt = int(parts[0])
            if cnt != 3:
                raise MeshParseError(f"face {i} has {cnt} vertices; only triangles supported")
            tris.append([int(parts[1]), int(parts[2]), int(parts[3])])
    except MeshParseError:
        raise
    except (IndexError, ValueError) as exc:
        raise MeshParseError("malformed OFF body") from exc
    return verts, np.array(tris, dtype=np.int64).reshape(-1, 3), None


def _parse_obj(text):
    verts = []
    tris = []
    name = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except (IndexError, ValueError) as exc:
                raise MeshParseError(f"bad vertex at line {lineno}") from exc
        elif tag == "f":
            if len(parts) != 4:
                raise MeshParseError(
                    f"face at line {lineno} has {len(parts) - 1} vertices; only triangles supported"
                )
            idx = []
            for p in parts[1:]:
                try:
                    raw_i = int(p.split("/")[0])
                except ValueError as exc:
                    raise MeshParseError(f"bad face index at line {lineno}") from exc
                # OBJ is 1-based; negative indices count back from the end
                idx.append(raw_i - 1 if raw_i > 0 else len(verts) + raw_i)
            tris.append(idx)
        elif tag == "o" and len(parts) > 1:
            name = parts[1]
        # vn/vt/g/s/usemtl/mtllib lines are ignored
    if not verts:
        raise MeshParseError("OBJ file has no vertices")
    return np.array(verts), np.array(tris, dtype=np.int64).reshape(-1, 3), name


def save_obj(mesh, path):
    """Write an ASCII OBJ preserving vertex order (f64 round-trip precision)."""
    with open(str(path), "w") as f:
        f.write(f"o {mesh.name}\n")
        for v in mesh.vertices:
            f.write("v %.17g %.17g %.17g\n" % (v[0], v[1], v[2]))
        for t in mesh.triangles:
            f.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))


def normalize_area(mesh):
    """Uniformly rescale to total surface area 1.

    Returns a new TriMesh; connectivity is unchanged. Raises MeshError
    on zero total area.
    """
    area = mesh.total_area()
    if area <= 0.0:
        raise MeshError("cannot normalize mesh with zero total area")
    return mesh.with_vertices(mesh.vertices * area ** -0.5, validate=False)


def vertex_areas(mesh):
    """Barycentric lumped vertex areas: a_p = (1/3) sum of incident triangle areas.

    The entries are strictly positive and sum to the total surface area.
    """
    tri_areas = mesh.triangle_areas()
    a = np.zeros(mesh.n_vertices)
    for c in range(3):
        np.add.at(a, mesh.triangles[:, c], tri_areas / 3.0)
    return a


def farthest_point_sample(mesh, count, seed=0):
    """Greedy Euclidean farthest-point sampling.

    The first vertex is ``seed mod n``; each following pick maximizes the
    minimum Euclidean distance to the already-selected set. Deterministic,
    ties broken by smallest vertex index (argmax convention).
    """
    n = mesh.n_vertices
    count = int(count)
    if count < 1 or count > n:
        raise ValueError(f"sample count {count} outside [1, {n}]")
    v = mesh.vertices
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = int(seed) % n
    mind = np.linalg.norm(v - v[chosen[0]], axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, np.linalg.norm(v - v[nxt], axis=1), out=mind)
    return SampleSet(chosen, method="FPS", seed=seed)


def geodesic_distances(mesh, source):
    """Single-source shortest-path distances over the edge graph (Dijkstra).

    Edge weights are Euclidean lengths, so the result upper-bounds the true
    polyhedral geodesic distance. d[source] = 0.
    """
    source = int(source)
    if source < 0 or source >= mesh.n_vertices:
        raise ValueError(f"source vertex {source} out of range")
    d = csgraph.dijkstra(mesh.vertex_adjacency(), directed=False, indices=source)
    if not np.all(np.isfinite(d)):
        raise DisconnectedMeshError("unreachable vertex in geodesic computation")
    return d
