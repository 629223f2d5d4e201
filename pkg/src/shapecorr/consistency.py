"""Cycle-consistency audits over shape collections: triplet sampling and residuals."""

import numpy as np


class TripletSample:
    """M seeded triples of pairwise-distinct shape indices."""

    def __init__(self, triplets, seed):
        self.triplets = np.asarray(triplets, dtype=np.int64)
        self.seed = int(seed)
        if self.triplets.ndim != 2 or self.triplets.shape[1] != 3:
            raise ValueError("triplets must be (M, 3)")

    def __len__(self):
        return self.triplets.shape[0]


def sample_triplets(n_shapes, m, seed=0):
    """Uniform triples (i, j, l) with distinct entries, with replacement across triples."""
    n_shapes = int(n_shapes)
    if n_shapes < 3:
        raise ValueError("need at least 3 shapes to sample triplets")
    rng = np.random.default_rng(seed)
    out = np.empty((int(m), 3), dtype=np.int64)
    for row in range(int(m)):
        out[row] = rng.choice(n_shapes, size=3, replace=False)
    return TripletSample(out, seed)


def _get_map(maps, i, j):
    try:
        return maps[(i, j)]
    except KeyError:
        raise KeyError(f"missing map for pair ({i}, {j})") from None


def spectral_cycle_residual(maps, triplets, per_triplet=False):
    """Mean of ||C_li C_jl C_ij - I||_F^2 / k over the sampled triplets.

    maps is keyed by ordered index pairs (i, j) with the C_ij convention.
    """
    vals = np.empty(len(triplets))
    eye = None
    for row, (i, j, l) in enumerate(triplets.triplets):
        c_ij = _get_map(maps, i, j).values
        c_jl = _get_map(maps, j, l).values
        c_li = _get_map(maps, l, i).values
        if eye is None:
            eye = np.eye(c_ij.shape[0])
        r = c_li @ c_jl @ c_ij - eye
        vals[row] = (r ** 2).sum() / c_ij.shape[0]
    return (float(vals.mean()), vals) if per_triplet else float(vals.mean())


def functional_cycle_residual_on_a(maps, coeffs, triplets, per_triplet=False):
    """Mean of ||C_li C_jl C_ij A_i - A_i||_F / ||A_i||_F over the triplets.

    The restriction to the column space of A_i: this is the quantity the
    zero-residual argument actually controls, independent of the row rank.
    """
    vals = np.empty(len(triplets))
    for row, (i, j, l) in enumerate(triplets.triplets):
        c_ij = _get_map(maps, i, j).values
        c_jl = _get_map(maps, j, l).values
        c_li = _get_map(maps, l, i).values
        a_i = coeffs[i].values
        num = np.linalg.norm(c_li @ (c_jl @ (c_ij @ a_i)) - a_i)
        den = np.linalg.norm(a_i)
        if den == 0.0:
            raise ValueError(f"zero coefficient matrix for shape {i}")
        vals[row] = num / den
    return (float(vals.mean()), vals) if per_triplet else float(vals.mean())


def spatial_cycle_deviation(pmaps, meshes, triplets, per_triplet=False):
    """Mean Euclidean deviation of composed vertex maps from the identity.

    pmaps[(i, j)] must map vertices of shape i into shape j (the forward
    extraction); the deviation averages ||pos(T_li(T_jl(T_ij(p)))) - pos(p)||
    over all vertices p of shape i and all triplets. Meshes should be
    area-normalized so deviations are comparable across shapes.
    """
    vals = np.empty(len(triplets))
    for row, (i, j, l) in enumerate(triplets.triplets):
        t_ij = _get_map(pmaps, i, j)
        t_jl = _get_map(pmaps, j, l)
        t_li = _get_map(pmaps, l, i)
        for a, b in ((t_ij, t_jl), (t_jl, t_li)):
            if a.to_id != b.from_id:
                raise ValueError(
                    f"maps do not compose: {a.from_id}->{a.to_id} then "
                    f"{b.from_id}->{b.to_id}"
                )
        composed = t_li.assignment[t_jl.assignment[t_ij.assignment]]
        pos = meshes[i].vertices
        vals[row] = float(
            np.linalg.norm(pos[composed] - pos, axis=1).mean()
        )
    return (float(vals.mean()), vals) if per_triplet else float(vals.mean())
