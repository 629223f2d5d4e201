"""Bit-exact file codecs: matrices, bases, functional maps, point maps, checkpoints, manifests.

All binary payloads are little-endian float64; all indices in every format
are 0-based. Encode-then-decode is the identity, bitwise, for every f64
payload.
"""

import struct

import numpy as np

from .evaluation import GroundTruth
from .fmap import FunctionalMap, PointMap
from .spectral import SpectralBasis

MATRIX_MAGIC = b"FMAT"
FMAP_MAGIC = b"FMAP"
BASIS_MAGIC = b"SPEC"
CHECKPOINT_MAGIC = b"SSCM"
BASIS_VERSION = 1
CHECKPOINT_VERSION = 1


class CodecError(Exception):
    """Malformed, truncated, or wrong-magic file content."""


def _read_exact(f, count, what):
    data = f.read(count)
    if len(data) != count:
        raise CodecError(f"truncated file while reading {what}")
    return data


def _check_magic(f, magic):
    got = f.read(len(magic))
    if got != magic:
        raise CodecError(f"bad magic {got!r}, expected {magic!r}")


def _write_u32(f, value):
    f.write(struct.pack("<I", int(value)))


def _read_u32(f, what):
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def _write_str(f, s):
    data = s.encode("utf-8")
    _write_u32(f, len(data))
    f.write(data)


def _read_str(f, what):
    n = _read_u32(f, f"{what} length")
    return _read_exact(f, n, what).decode("utf-8")


def _write_f64(f, arr):
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_f64(f, count, what):
    data = _read_exact(f, 8 * count, what)
    return np.frombuffer(data, dtype="<f8").copy()


def write_matrix(path, values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("matrix payload must be 2-D")
    with open(str(path), "wb") as f:
        f.write(MATRIX_MAGIC)
        _write_u32(f, values.shape[0])
        _write_u32(f, values.shape[1])
        _write_f64(f, values)


def read_matrix(path):
    with open(str(path), "rb") as f:
        _check_magic(f, MATRIX_MAGIC)
        rows = _read_u32(f, "row count")
        cols = _read_u32(f, "col count")
        values = _read_f64(f, rows * cols, "matrix payload").reshape(rows, cols)
        if f.read(1):
            raise CodecError("trailing bytes after matrix payload")
    return values


def write_fmap(path, cmap):
    with open(str(path), "wb") as f:
        f.write(FMAP_MAGIC)
        _write_u32(f, cmap.k)
        _write_str(f, cmap.source_id)
        _write_str(f, cmap.target_id)
        _write_f64(f, cmap.values)


def read_fmap(path):
    with open(str(path), "rb") as f:
        _check_magic(f, FMAP_MAGIC)
        k = _read_u32(f, "map size")
        source_id = _read_str(f, "source id")
        target_id = _read_str(f, "target id")
        values = _read_f64(f, k * k, "map payload").reshape(k, k)
    return FunctionalMap(values, source_id=source_id, target_id=target_id)


def write_basis(path, basis):
    with open(str(path), "wb") as f:
        f.write(BASIS_MAGIC)
        _write_u32(f, BASIS_VERSION)
        _write_u32(f, basis.n)
        _write_u32(f, basis.k)
        _write_f64(f, basis.lam)
        _write_f64(f, basis.mass)
        _write_f64(f, basis.phi)


def read_basis(path):
    with open(str(path), "rb") as f:
        _check_magic(f, BASIS_MAGIC)
        version = _read_u32(f, "basis version")
        if version != BASIS_VERSION:
            raise CodecError(f"unsupported basis version {version}")
        n = _read_u32(f, "vertex count")
        k = _read_u32(f, "basis size")
        lam = _read_f64(f, k, "eigenvalues")
        mass = _read_f64(f, n, "mass diagonal")
        phi = _read_f64(f, n * k, "eigenfunctions").reshape(n, k)
    return SpectralBasis(phi, lam, mass)


def write_pointmap(path, pmap):
    with open(str(path), "w") as f:
        f.write(f"# pointmap {pmap.n_from} {pmap.n_to} {pmap.from_id} {pmap.to_id}\n")
        for idx in pmap.assignment:
            f.write(f"{idx}\n")


def _parse_pointmap(path, allow_unannotated=False):
    with open(str(path), "r") as f:
        header = f.readline().split()
        if len(header) != 6 or header[:2] != ["#", "pointmap"]:
            raise CodecError("bad point-map header")
        try:
            n_from, n_to = int(header[2]), int(header[3])
        except ValueError as exc:
            raise CodecError("bad point-map counts") from exc
        from_id, to_id = header[4], header[5]
        body = [ln.strip() for ln in f if ln.strip()]
    if len(body) != n_from:
        raise CodecError(f"point map declares {n_from} entries, found {len(body)}")
    if n_from == 0:
        raise CodecError("empty point map")
    try:
        assignment = np.array([int(x) for x in body], dtype=np.int64)
    except ValueError as exc:
        raise CodecError("non-integer point-map entry") from exc
    lo = -1 if allow_unannotated else 0
    if assignment.min() < lo or assignment.max() >= n_to:
        raise CodecError("point-map index out of range")
    return assignment, n_to, from_id, to_id


def read_pointmap(path):
    assignment, n_to, from_id, to_id = _parse_pointmap(path)
    return PointMap(assignment, n_to=n_to, from_id=from_id, to_id=to_id)


def read_groundtruth(path):
    """Point-map file as ground truth; -1 entries become masked vertices."""
    assignment, n_to, _, _ = _parse_pointmap(path, allow_unannotated=True)
    mask = assignment >= 0
    if mask.all():
        return GroundTruth(assignment, n_target=n_to)
    safe = assignment.copy()
    safe[~mask] = 0
    return GroundTruth(safe, n_target=n_to, mask=mask)


def write_checkpoint(path, model, config, final_alpha):
    """Model parameters plus the few run settings inference needs."""
    with open(str(path), "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        _write_u32(f, CHECKPOINT_VERSION)
        _write_str(f, model.mode)
        _write_str(f, config.mode)
        _write_u32(f, config.k)
        _write_u32(f, config.d)
        _write_f64(f, np.array([config.lam, float(final_alpha)]))
        _write_u32(f, len(model.params))
        for name in sorted(model.params):
            values = model.params[name]
            _write_str(f, name)
            _write_u32(f, values.shape[0])
            _write_u32(f, values.shape[1])
            _write_f64(f, values)


def read_checkpoint(path):
    """Returns (params dict, metadata dict)."""
    with open(str(path), "rb") as f:
        _check_magic(f, CHECKPOINT_MAGIC)
        version = _read_u32(f, "checkpoint version")
        if version != CHECKPOINT_VERSION:
            raise CodecError(f"unsupported checkpoint version {version}")
        feature_mode = _read_str(f, "feature mode")
        train_mode = _read_str(f, "train mode")
        k = _read_u32(f, "basis size")
        d = _read_u32(f, "feature width")
        lam, final_alpha = _read_f64(f, 2, "solver settings")
        n_params = _read_u32(f, "parameter count")
        params = {}
        for _ in range(n_params):
            name = _read_str(f, "parameter name")
            rows = _read_u32(f, "parameter rows")
            cols = _read_u32(f, "parameter cols")
            params[name] = _read_f64(f, rows * cols, name).reshape(rows, cols)
    meta = {
        "feature_mode": feature_mode, "train_mode": train_mode,
        "k": int(k), "d": int(d), "lam": float(lam),
        "final_alpha": float(final_alpha),
    }
    return params, meta


class Manifest:
    """Parsed collection manifest.

    Grammar (one directive per line, '#' comments):

        shape <id> <mesh-path> [basis=<path>] [desc=<path>]
        pair <from-id> <to-id> [gt=<path>]
        pairs all

    Paths are resolved relative to the manifest file. ``pairs all`` expands
    to every ordered pair of distinct shapes; explicit pair lines then only
    contribute their ground-truth annotations.
    """

    def __init__(self, shapes, pairs, all_pairs=False):
        self.shapes = shapes        # list of dicts: id, mesh, basis, desc
        ids = [s["id"] for s in shapes]
        if len(set(ids)) != len(ids):
            raise CodecError("duplicate shape id in manifest")
        self._index = {s["id"]: s for s in shapes}
        self.all_pairs = all_pairs
        if all_pairs:
            gt = {(p["from"], p["to"]): p["gt"] for p in pairs}
            self.pairs = [
                {"from": a, "to": b, "gt": gt.get((a, b))}
                for a in ids for b in ids if a != b
            ]
        else:
            self.pairs = pairs

    def shape(self, shape_id):
        try:
            return self._index[shape_id]
        except KeyError:
            raise CodecError(f"manifest has no shape {shape_id!r}") from None


def read_manifest(path):
    import os

    base = os.path.dirname(os.path.abspath(str(path)))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    shapes, pairs, all_pairs = [], [], False
    with open(str(path), "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "shape":
                if len(parts) < 3:
                    raise CodecError(f"line {lineno}: shape needs an id and a mesh path")
                entry = {"id": parts[1], "mesh": resolve(parts[2]),
                         "basis": None, "desc": None}
                for opt in parts[3:]:
                    if opt.startswith("basis="):
                        entry["basis"] = resolve(opt[6:])
                    elif opt.startswith("desc="):
                        entry["desc"] = resolve(opt[5:])
                    else:
                        raise CodecError(f"line {lineno}: unknown shape option {opt!r}")
                shapes.append(entry)
            elif parts[0] == "pair":
                if len(parts) < 3:
                    raise CodecError(f"line {lineno}: pair needs two shape ids")
                entry = {"from": parts[1], "to": parts[2], "gt": None}
                for opt in parts[3:]:
                    if opt.startswith("gt="):
                        entry["gt"] = resolve(opt[3:])
                    else:
                        raise CodecError(f"line {lineno}: unknown pair option {opt!r}")
                pairs.append(entry)
            elif parts[0] == "pairs":
                if len(parts) != 2 or parts[1] != "all":
                    raise CodecError(f"line {lineno}: expected 'pairs all'")
                all_pairs = True
            else:
                raise CodecError(f"line {lineno}: unknown directive {parts[0]!r}")
    if not shapes:
        raise CodecError("manifest declares no shapes")
    return Manifest(shapes, pairs, all_pairs=all_pairs)
