"""Regularized functional-map estimation, structural losses, pointwise conversion.

Direction convention throughout: C_ij A_i ~ A_j, i.e. a map with
source_id = i transports spectral coefficients from shape i to shape j.
"""

import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

PULLBACK_ROWS = "PullbackRows"
FORWARD_ROWS = "ForwardRows"

COND_WARN_THRESHOLD = 1e8


class SingularSystemError(Exception):
    """A row system of the functional-map solve is numerically singular."""


class CoeffMatrix:
    """Spectrally projected descriptors A = Phi^dagger G, shape (k, d)."""

    def __init__(self, values, shape_id="?"):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("coefficient matrix must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValueError("coefficient matrix has non-finite entries")
        self.shape_id = str(shape_id)

    @property
    def k(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    def gram_condition(self):
        """Condition number of A A^T, the full-row-rank monitor."""
        s = np.linalg.svd(self.values, compute_uv=False)
        if s[-1] == 0.0:
            return np.inf
        return float((s[0] / s[-1]) ** 2)


class FunctionalMap:
    """k x k spectral transport matrix with its direction metadata."""

    def __init__(self, values, source_id="?", target_id="?"):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError("functional map must be square")
        if not np.isfinite(self.values).all():
            raise ValueError("functional map has non-finite entries")
        self.source_id = str(source_id)
        self.target_id = str(target_id)

    @property
    def k(self):
        return self.values.shape[0]

    def off_diagonal_fraction(self):
        """Fraction of squared Frobenius mass living off the diagonal."""
        total = float((self.values ** 2).sum())
        if total == 0.0:
            return 0.0
        diag = float((np.diag(self.values) ** 2).sum())
        return max(0.0, (total - diag) / total)


class PointMap:
    """Hard vertex correspondence: assignment[p] is a vertex of the to-shape."""

    def __init__(self, assignment, n_to, from_id="?", to_id="?"):
        self.assignment = np.asarray(assignment, dtype=np.int64)
        self.n_to = int(n_to)
        if self.assignment.size == 0:
            raise ValueError("point map must have at least one entry")
        if self.assignment.min() < 0 or self.assignment.max() >= self.n_to:
            raise ValueError("point-map index out of range")
        self.from_id = str(from_id)
        self.to_id = str(to_id)

    @property
    def n_from(self):
        return self.assignment.shape[0]


def solve_fmreg(a1, a2, lam1, lam2, lam=1e-3):
    """Least-squares functional map with Laplacian-commutativity regularization.

    Minimizes ||C A1 - A2||_F^2 + lam ||C diag(lam1) - diag(lam2) C||_F^2.
    Row i of C solves the SPD system (A1 A1^T + lam D_i) c = A1 a2_i with
    D_i = diag_j((lam1_j - lam2_i)^2).

    Returns
    -------
    cmap : FunctionalMap
    objective : float, value of the minimized objective at the solution
    """
    if a1.d != a2.d:
        raise ValueError(f"descriptor widths differ: {a1.d} vs {a2.d}")
    k = a1.k
    if a2.k != k or len(lam1) != k or len(lam2) != k:
        raise ValueError("basis sizes of coefficients and eigenvalues must agree")
    if lam < 0.0:
        raise ValueError("regularization weight must be nonnegative")
    lam1 = np.asarray(lam1, dtype=np.float64)
    lam2 = np.asarray(lam2, dtype=np.float64)

    gram = a1.values @ a1.values.T
    cond = _sym_condition(gram)
    if cond > COND_WARN_THRESHOLD:
        warnings.warn(
            f"A1 ({a1.shape_id}) gram condition {cond:.2e} exceeds "
            f"{COND_WARN_THRESHOLD:.0e}; solve may be unreliable",
            stacklevel=2,
        )
    rhs_all = a1.values @ a2.values.T  # column i = A1 a2_i
    c = np.empty((k, k))
    for i in range(k):
        d_i = (lam1 - lam2[i]) ** 2
        try:
            factor = cho_factor(gram + lam * np.diag(d_i))
        except LinAlgError as exc:
            raise SingularSystemError(
                f"row {i}: system singular (rank-deficient A1 with "
                f"repeated spectrum and lam={lam:g})"
            ) from exc
        c[i] = cho_solve(factor, rhs_all[:, i])
    cmap = FunctionalMap(c, source_id=a1.shape_id, target_id=a2.shape_id)
    objective = loss_descriptor(cmap, a1, a2) + lam * loss_laplacian_commutativity(
        cmap, lam1, lam2
    )
    return cmap, objective


def _sym_condition(gram):
    s = np.linalg.svd(gram, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0.0 else np.inf


def loss_descriptor(cmap, a1, a2):
    """Squared Frobenius descriptor-preservation residual ||C A1 - A2||^2."""
    if cmap.k != a1.k or a1.d != a2.d or a2.k != cmap.k:
        raise ValueError("dimension mismatch in descriptor loss")
    r = cmap.values @ a1.values - a2.values
    return float((r ** 2).sum())


def loss_orthogonality(cmap):
    """||C^T C - I||_F^2; zero exactly on orthogonal maps."""
    g = cmap.values.T @ cmap.values - np.eye(cmap.k)
    return float((g ** 2).sum())


def loss_laplacian_commutativity(cmap, lam1, lam2):
    """sum_ij C_ij^2 (lam1_j - lam2_i)^2, the diagonal-commutator penalty."""
    lam1 = np.asarray(lam1, dtype=np.float64)
    lam2 = np.asarray(lam2, dtype=np.float64)
    if len(lam1) != cmap.k or len(lam2) != cmap.k:
        raise ValueError("eigenvalue vectors must match map size")
    gap = lam1[None, :] - lam2[:, None]
    return float((cmap.values ** 2 * gap ** 2).sum())


def loss_bijectivity(c12, c21):
    """||C21 C12 - I||_F^2 for an opposite-direction map pair."""
    if c12.k != c21.k:
        raise ValueError("maps have different sizes")
    if (c12.source_id, c12.target_id) != (c21.target_id, c21.source_id):
        raise ValueError(
            f"maps are not an opposite-direction pair: "
            f"{c12.source_id}->{c12.target_id} vs {c21.source_id}->{c21.target_id}"
        )
    r = c21.values @ c12.values - np.eye(c12.k)
    return float((r ** 2).sum())


def fmap_to_pointmap(cmap, basis_src, basis_tgt, direction=PULLBACK_ROWS):
    """Extract a hard vertex map by nearest neighbors between embedding rows.

    The compared embeddings are Phi_src and Phi_tgt C. PullbackRows
    (default) assigns each target vertex its nearest source row, yielding a
    map from the target shape into the source shape; ForwardRows assigns
    each source vertex its nearest row of Phi_tgt C, yielding the
    source-to-target map. Ties break to the smallest index.
    """
    if basis_src.k != cmap.k or basis_tgt.k != cmap.k:
        raise ValueError("basis sizes do not match the functional map")
    aligned_tgt = basis_tgt.phi @ cmap.values  # rows comparable with Phi_src
    if direction == PULLBACK_ROWS:
        assignment = _nearest_rows(queries=aligned_tgt, pool=basis_src.phi)
        return PointMap(assignment, n_to=basis_src.n,
                        from_id=cmap.target_id, to_id=cmap.source_id)
    if direction == FORWARD_ROWS:
        assignment = _nearest_rows(queries=basis_src.phi, pool=aligned_tgt)
        return PointMap(assignment, n_to=basis_tgt.n,
                        from_id=cmap.source_id, to_id=cmap.target_id)
    raise ValueError(f"unknown extraction direction {direction!r}")


def _nearest_rows(queries, pool, block=2048):
    """argmin_j ||pool[j] - queries[i]|| per query row, first index on ties."""
    pool_sq = (pool ** 2).sum(axis=1)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for start in range(0, queries.shape[0], block):
        q = queries[start:start + block]
        d2 = pool_sq[None, :] - 2.0 * (q @ pool.T) + (q ** 2).sum(axis=1)[:, None]
        out[start:start + block] = np.argmin(d2, axis=1)
    return out
