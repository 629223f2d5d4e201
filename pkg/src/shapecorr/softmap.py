"""Latent-aligned embeddings and soft correspondence matrices.

The spatial branch: descriptors projected to coefficients place every shape
in one canonical embedding frame (Phi_i A_i); row-stochastic soft maps come
from a sharpness-controlled softmax over embedding distances and convert
back to functional maps through the mass-weighted pullback.
"""

import numpy as np

from .fmap import FunctionalMap
from .spectral import reconstruct

STREAM_BLOCK = 1024


class SoftMap:
    """Row-stochastic correspondence weights from one shape's vertices to another's.

    weights[q, p] is the probability that vertex q of the from-shape
    corresponds to vertex p of the to-shape. Materialized only at desk
    scale; use iter_soft_rows for large shapes.
    """

    def __init__(self, weights, alpha, from_id="?", to_id="?"):
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        self.alpha = float(alpha)
        self.from_id = str(from_id)
        self.to_id = str(to_id)

    @property
    def n_from(self):
        return self.weights.shape[0]

    @property
    def n_to(self):
        return self.weights.shape[1]


class AlphaSchedule:
    """Linear sharpness curriculum: alpha0 + step per completed epoch."""

    def __init__(self, alpha0=1.0, step=5.0, epoch_len=1):
        if alpha0 <= 0.0:
            raise ValueError("alpha0 must be positive")
        if step < 0.0:
            raise ValueError("step must be nonnegative")
        if epoch_len < 1:
            raise ValueError("epoch_len must be at least 1")
        self.alpha0 = float(alpha0)
        self.step = float(step)
        self.epoch_len = int(epoch_len)

    def at_epoch(self, epoch):
        if epoch < 0:
            raise ValueError("epoch must be nonnegative")
        return self.alpha0 + self.step * epoch

    def at_iteration(self, iteration):
        return self.at_epoch(int(iteration) // self.epoch_len)


def alpha_at(schedule, epoch):
    """Curriculum sharpness at an epoch: alpha0 + step * epoch."""
    return schedule.at_epoch(epoch)


def aligned_embedding(basis, coeffs):
    """Canonical-frame embedding Phi A of a shape (rows are vertices)."""
    return reconstruct(basis, coeffs.values if hasattr(coeffs, "values") else coeffs)


def _soft_rows(emb_src, emb_tgt_block, alpha):
    """Softmax rows exp(-alpha * delta) / row-sum for one block of target vertices.

    delta[q, p] = ||emb_src[p] - emb_tgt_block[q]||_2, with max-subtraction
    for overflow safety. Returns (rows, delta).
    """
    d2 = (
        (emb_tgt_block ** 2).sum(axis=1)[:, None]
        - 2.0 * (emb_tgt_block @ emb_src.T)
        + (emb_src ** 2).sum(axis=1)[None, :]
    )
    delta = np.sqrt(np.maximum(d2, 0.0))
    logits = -alpha * delta
    logits -= logits.max(axis=1, keepdims=True)
    rows = np.exp(logits)
    rows /= rows.sum(axis=1, keepdims=True)
    return rows, delta


def soft_correspondence(emb_src, emb_tgt, alpha, from_id="?", to_id="?"):
    """Materialized soft map Pi (n_tgt x n_src) between embedding rows.

    Pi(q, p) = exp(-alpha d(q,p)) / sum_p' exp(-alpha d(q,p')), computed
    per row with max-subtraction. Rows are exactly normalized.
    """
    emb_src = np.asarray(emb_src, dtype=np.float64)
    emb_tgt = np.asarray(emb_tgt, dtype=np.float64)
    if emb_src.shape[1] != emb_tgt.shape[1]:
        raise ValueError("embedding widths differ")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    blocks = [
        _soft_rows(emb_src, emb_tgt[s:s + STREAM_BLOCK], alpha)[0]
        for s in range(0, emb_tgt.shape[0], STREAM_BLOCK)
    ]
    return SoftMap(np.concatenate(blocks, axis=0), alpha, from_id=from_id, to_id=to_id)


def iter_soft_rows(emb_src, emb_tgt, alpha, block=STREAM_BLOCK):
    """Yield (row_start, rows) blocks of the soft map without materializing it."""
    emb_src = np.asarray(emb_src, dtype=np.float64)
    emb_tgt = np.asarray(emb_tgt, dtype=np.float64)
    if emb_src.shape[1] != emb_tgt.shape[1]:
        raise ValueError("embedding widths differ")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    for s in range(0, emb_tgt.shape[0], block):
        yield s, _soft_rows(emb_src, emb_tgt[s:s + block], alpha)[0]


def softmap_to_fmap(pi, basis_src, basis_tgt, source_id=None, target_id=None):
    """Convert a soft map to the functional map Phi_tgt^T M_tgt Pi Phi_src.

    Accepts a SoftMap or an iterable of (row_start, rows) blocks (the
    streaming form); accumulation is row-block-wise in a fixed order, so
    streamed and materialized inputs produce bitwise-identical results.
    """
    if isinstance(pi, SoftMap):
        if pi.n_to != basis_src.n or pi.n_from != basis_tgt.n:
            raise ValueError("soft-map shape does not match the bases")
        blocks = (
            (s, pi.weights[s:s + STREAM_BLOCK])
            for s in range(0, pi.n_from, STREAM_BLOCK)
        )
        if source_id is None:
            source_id, target_id = pi.to_id, pi.from_id
    else:
        blocks = pi
    c = np.zeros((basis_tgt.k, basis_src.k))
    for start, rows in blocks:
        stop = start + rows.shape[0]
        if rows.shape[1] != basis_src.n or stop > basis_tgt.n:
            raise ValueError("soft-map block does not match the bases")
        weighted_tgt = basis_tgt.phi[start:stop] * basis_tgt.mass[start:stop, None]
        c += weighted_tgt.T @ (rows @ basis_src.phi)
    return FunctionalMap(c, source_id=source_id or "?", target_id=target_id or "?")


def feature_svd_truncate(a1, a2, m):
    """Joint dimensionality reduction of a coefficient pair via SVD of the first.

    A1 = U S V^T; both matrices are right-multiplied by the first m right
    singular vectors of A1. With m = d this is an orthogonal change of
    descriptor coordinates that preserves all embedding distances.
    """
    from .fmap import CoeffMatrix

    m = int(m)
    if m < 1 or m > a1.d:
        raise ValueError(f"truncation width {m} outside [1, {a1.d}]")
    if a2.d != a1.d:
        raise ValueError("coefficient matrices have different widths")
    _, _, vt = np.linalg.svd(a1.values, full_matrices=True)
    v_hat = vt[:m].T
    return (
        CoeffMatrix(a1.values @ v_hat, shape_id=a1.shape_id),
        CoeffMatrix(a2.values @ v_hat, shape_id=a2.shape_id),
    )
