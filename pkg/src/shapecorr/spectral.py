"""Cotangent Laplace-Beltrami discretization and truncated spectral bases.

The stiffness matrix W is the positive-semidefinite cotangent matrix
(row sums zero); the mass matrix is the barycentric lumped diagonal. The
basis solves the generalized problem W phi = lambda M phi, and the
M-weighted transpose Phi^T M acts as the exact left inverse of Phi.
"""

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh

from .mesh import vertex_areas, DegenerateTriangleError


class EigensolverError(Exception):
    """Eigendecomposition failed to converge or returned invalid pairs."""


class LaplacianPair:
    """Sparse stiffness W (n x n, symmetric PSD) and lumped mass diagonal (n,)."""

    def __init__(self, stiffness, mass):
        self.stiffness = stiffness
        self.mass = np.asarray(mass, dtype=np.float64)


class SpectralBasis:
    """Truncated Laplace-Beltrami eigenbasis of one shape.

    Attributes
    ----------
    phi : (n, k) eigenfunctions, columns ordered by eigenvalue
    lam : (k,) nondecreasing eigenvalues, lam[0] ~ 0 on a connected mesh
    mass : (n,) lumped vertex areas (diagonal of M)
    """

    def __init__(self, phi, lam, mass):
        self.phi = np.ascontiguousarray(phi, dtype=np.float64)
        self.lam = np.ascontiguousarray(lam, dtype=np.float64)
        self.mass = np.ascontiguousarray(mass, dtype=np.float64)

    @property
    def n(self):
        return self.phi.shape[0]

    @property
    def k(self):
        return self.phi.shape[1]

    def pinv(self):
        """Phi^dagger = Phi^T M, the M-weighted left inverse, shape (k, n)."""
        return self.phi.T * self.mass[None, :]

    def orthonormality_defect(self):
        """Frobenius norm of Phi^T M Phi - I."""
        g = self.pinv() @ self.phi
        return float(np.linalg.norm(g - np.eye(self.k)))


def cotan_laplacian(mesh):
    """Cotangent stiffness and barycentric mass of a triangle mesh.

    W_pq = -(cot a_pq + cot b_pq) / 2 on edges, W_pp = -sum of the row,
    so W 1 = 0 and W is positive semidefinite. Raises
    DegenerateTriangleError when a triangle angle falls below 1e-6 rad.
    """
    v = mesh.vertices
    t = mesh.triangles
    n = mesh.n_vertices

    # corner angles via edge lengths (law of cosines), angle c at corner 0 etc.
    l0 = np.linalg.norm(v[t[:, 1]] - v[t[:, 2]], axis=1)  # opposite corner 0
    l1 = np.linalg.norm(v[t[:, 2]] - v[t[:, 0]], axis=1)
    l2 = np.linalg.norm(v[t[:, 0]] - v[t[:, 1]], axis=1)
    cos0 = (l1 ** 2 + l2 ** 2 - l0 ** 2) / (2.0 * l1 * l2)
    cos1 = (l0 ** 2 + l2 ** 2 - l1 ** 2) / (2.0 * l0 * l2)
    cos2 = (l0 ** 2 + l1 ** 2 - l2 ** 2) / (2.0 * l0 * l1)
    angles = np.arccos(np.clip(np.stack([cos0, cos1, cos2]), -1.0, 1.0))
    bad = angles.min(axis=0) < 1e-6
    if bad.any():
        raise DegenerateTriangleError(
            f"triangle {int(np.nonzero(bad)[0][0])} has an angle below 1e-6 rad"
        )
    cot = np.cos(angles) / np.sin(angles)

    # the angle at corner c faces the edge between the other two corners
    rows = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    cols = np.concatenate([t[:, 2], t[:, 0], t[:, 1]])
    half_cot = 0.5 * np.concatenate([cot[0], cot[1], cot[2]])
    off = sparse.csr_matrix(
        (np.concatenate([-half_cot, -half_cot]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    diag = -np.asarray(off.sum(axis=1)).ravel()
    w = off + sparse.diags(diag)
    return LaplacianPair(w.tocsr(), vertex_areas(mesh))


def compute_basis(mesh, k, laplacian=None):
    """First k generalized eigenpairs of W x = lambda M x.

    Uses shift-invert Lanczos (shift -1e-8) with a fixed start vector for
    reproducibility; small problems (or k close to n) fall back to a dense
    solve. Each eigenvector is M-normalized and sign-fixed so its entry of
    largest magnitude is positive.
    """
    n = mesh.n_vertices
    k = int(k)
    if k < 1 or k > n:
        raise ValueError(f"basis size {k} outside [1, {n}]")
    lap = laplacian if laplacian is not None else cotan_laplacian(mesh)
    w, m = lap.stiffness, lap.mass

    if n <= 200 or k > n - 2:
        lam, phi = eigh(w.toarray(), np.diag(m))
        lam, phi = lam[:k], phi[:, :k]
    else:
        m_mat = sparse.diags(m).tocsc()
        try:
            lam, phi = eigsh(
                w, k=k, M=m_mat, sigma=-1e-8, which="LM",
                v0=np.full(n, 1.0 / np.sqrt(n)), maxiter=5000,
            )
        except Exception as exc:
            raise EigensolverError(f"shift-invert eigensolve failed: {exc}") from exc
    order = np.argsort(lam)
    lam, phi = lam[order], phi[:, order]

    # per-column relative residual ||W phi - lam M phi|| / ((|lam| + lam_ref) ||M phi||)
    resid = w @ phi - (m[:, None] * phi) * lam[None, :]
    mphi_norm = np.linalg.norm(m[:, None] * phi, axis=0)
    lam_ref = max(float(np.abs(lam).max()), float(np.abs(w).max() / m.max()))
    col_res = np.linalg.norm(resid, axis=0) / ((np.abs(lam) + lam_ref) * mphi_norm)
    if (col_res > 1e-6).any():
        worst = int(np.argmax(col_res))
        raise EigensolverError(
            f"eigenpair {worst} relative residual {col_res[worst]:.3e} exceeds 1e-6"
        )

    # M-normalize, then fix signs: largest-magnitude entry positive
    norms = np.sqrt(np.einsum("ij,i,ij->j", phi, m, phi))
    phi = phi / norms[None, :]
    flip = phi[np.abs(phi).argmax(axis=0), np.arange(k)] < 0
    phi[:, flip] *= -1.0
    return SpectralBasis(phi, lam, m)


def project(basis, signals):
    """Spectral coefficients A = Phi^T M G of per-vertex signals G (n x d)."""
    g = np.asarray(signals, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    if g.shape[0] != basis.n:
        raise ValueError(f"signal rows {g.shape[0]} != vertex count {basis.n}")
    return basis.pinv() @ g


def reconstruct(basis, coeffs):
    """Per-vertex values Phi A of spectral coefficients A (k x d)."""
    a = np.asarray(coeffs, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != basis.k:
        raise ValueError(f"coefficient rows {a.shape[0]} != basis size {basis.k}")
    return basis.phi @ a
