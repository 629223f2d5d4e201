"""Two-branch training loop: toy feature models, structural losses, exact gradients.

The feature extractor is deliberately small: either one linear layer shared
across shapes (Siamese) applied to fixed per-vertex descriptors, or free
per-shape coefficient matrices. The forward pass produces a spectral map
from the regularized solve and a spatial map through the soft
correspondence; gradients of the combined loss are propagated in closed
form through the row-wise SPD solves (adjoint rule), the softmax rows, and
the embedding distances.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .fmap import (
    CoeffMatrix,
    FunctionalMap,
    SingularSystemError,
    loss_bijectivity,
    loss_descriptor,
    loss_laplacian_commutativity,
    loss_orthogonality,
)
from .mesh import farthest_point_sample
from .softmap import AlphaSchedule, _soft_rows
from .spectral import project

TWO_BRANCH = "two-branch"
SPECTRAL_ONLY = "spectral-only"
SPATIAL_ONLY = "spatial-only"
MODES = (TWO_BRANCH, SPECTRAL_ONLY, SPATIAL_ONLY)

SHARED_LINEAR = "shared-linear"
DIRECT_COEFFS = "direct-coefficients"

HISTORY_FIELDS = (
    "iteration", "epoch", "alpha", "pair",
    "orth", "consist", "desc", "lap", "bij", "total",
)


class TrainingDivergenceError(Exception):
    """Loss exceeded the divergence guard; carries the history so far."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


class Shape:
    """One training shape: mesh plus its precomputed basis and descriptors."""

    def __init__(self, shape_id, mesh, basis, desc):
        self.id = str(shape_id)
        self.mesh = mesh
        self.basis = basis
        self.desc = desc
        self._projected = None
        self._fps_cache = {}

    @property
    def projected_descriptors(self):
        """Phi^T M G, the (k, d_in) projection of the input descriptors."""
        if self._projected is None:
            self._projected = project(self.basis, self.desc.values)
        return self._projected

    def fps_indices(self, count, seed):
        key = (int(count), int(seed))
        if key not in self._fps_cache:
            self._fps_cache[key] = farthest_point_sample(self.mesh, count, seed).indices
        return self._fps_cache[key]


class FeatureModel:
    """Learnable features: shared linear layer or per-shape coefficients.

    shared-linear holds one (d_in, d) matrix applied to every shape's
    descriptors (the Siamese property); direct-coefficients holds one
    (k, d) matrix per shape id.
    """

    def __init__(self, mode, params, seed=0):
        if mode not in (SHARED_LINEAR, DIRECT_COEFFS):
            raise ValueError(f"unknown feature-model mode {mode!r}")
        self.mode = mode
        self.params = params  # dict name -> ndarray
        self.seed = int(seed)
        for v in params.values():
            if not np.isfinite(v).all():
                raise ValueError("model parameters must be finite")

    @classmethod
    def shared_linear(cls, d_in, d, seed=0):
        rng = np.random.default_rng(seed)
        theta = rng.standard_normal((int(d_in), int(d))) / np.sqrt(d_in)
        return cls(SHARED_LINEAR, {"theta": theta}, seed=seed)

    @classmethod
    def direct(cls, shape_ids, k, d, seed=0):
        rng = np.random.default_rng(seed)
        params = {
            f"A:{sid}": rng.standard_normal((int(k), int(d))) / np.sqrt(d)
            for sid in shape_ids
        }
        return cls(DIRECT_COEFFS, params, seed=seed)

    def coeff(self, shape):
        """Coefficient matrix A_i of one shape under the current parameters."""
        if self.mode == SHARED_LINEAR:
            return CoeffMatrix(shape.projected_descriptors @ self.params["theta"],
                               shape_id=shape.id)
        key = f"A:{shape.id}"
        if key not in self.params:
            raise KeyError(f"no coefficients for shape {shape.id!r}")
        return CoeffMatrix(self.params[key], shape_id=shape.id)

    def zero_grad_like(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self):
        return FeatureModel(
            self.mode, {k: v.copy() for k, v in self.params.items()}, seed=self.seed
        )


class TrainConfig:
    """All knobs of a training run; defaults mirror the usual setup.

    Loss weights default to the equal orthogonality/consistency weighting
    with the other terms off. epoch_len = None means one epoch is one pass
    over the ordered-pair list.
    """

    def __init__(self, k=50, d=128, lam=1e-3, lr=2e-4, iterations=10000,
                 alpha0=1.0, alpha_step=5.0, epoch_len=None,
                 w_orth=1.0, w_consist=1.0, w_desc=0.0, w_lap=0.0, w_bij=0.0,
                 mode=TWO_BRANCH, deterministic=False, seed=0,
                 fps_count=None, svd_m=None):
        if mode not in MODES:
            raise ValueError(f"unknown training mode {mode!r}")
        for name, w in (("w_orth", w_orth), ("w_consist", w_consist),
                        ("w_desc", w_desc), ("w_lap", w_lap), ("w_bij", w_bij)):
            if w < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if iterations < 1:
            raise ValueError("iterations must be positive")
        if epoch_len is not None and int(epoch_len) < 1:
            raise ValueError("epoch_len must be positive")
        self.k = int(k)
        self.d = int(d)
        self.lam = float(lam)
        self.lr = float(lr)
        self.iterations = int(iterations)
        self.alpha0 = float(alpha0)
        self.alpha_step = float(alpha_step)
        self.epoch_len = None if epoch_len is None else int(epoch_len)
        self.w_orth = float(w_orth)
        self.w_consist = float(w_consist)
        self.w_desc = float(w_desc)
        self.w_lap = float(w_lap)
        self.w_bij = float(w_bij)
        self.mode = mode
        self.deterministic = bool(deterministic)
        self.seed = int(seed)
        self.fps_count = None if fps_count is None else int(fps_count)
        self.svd_m = None if svd_m is None else int(svd_m)


class PairOutput:
    """Forward-pass result for one ordered shape pair."""

    def __init__(self, a_i, a_j, c1, c2, loss_terms):
        self.a_i = a_i
        self.a_j = a_j
        self.c1 = c1
        self.c2 = c2
        self.loss_terms = loss_terms


def total_loss(out, config):
    """Weighted sum of the pair's loss terms under the config weights."""
    t = out.loss_terms
    return (config.w_orth * t["orth"] + config.w_consist * t["consist"]
            + config.w_desc * t["desc"] + config.w_lap * t["lap"]
            + config.w_bij * t["bij"])


def forward_pair(model, shape_i, shape_j, alpha, config):
    """Run the two-branch forward pass on one ordered pair.

    two-branch: C1 from the regularized solve, C2 from the soft map; all
    loss terms evaluated (orth/desc/lap on C1). spectral-only skips the
    spatial branch (consist = 0, C2 echoes C1). spatial-only skips the
    solve and scores C2 against the structural terms directly (C1 echoes
    C2). The bijectivity term is evaluated only when its weight is
    positive, using the reverse-direction map of the active branch.
    """
    out, _ = _forward(model, shape_i, shape_j, alpha, config)
    return out


def _solve_rows(a1, a2, lam1, lam2, lam):
    """Row-wise regularized solve returning (C values, cached factors)."""
    gram = a1 @ a1.T
    rhs = a1 @ a2.T
    k = a1.shape[0]
    c = np.empty((k, k))
    factors = []
    for i in range(k):
        d_i = (lam1 - lam2[i]) ** 2
        try:
            factor = cho_factor(gram + lam * np.diag(d_i))
        except LinAlgError as exc:
            raise SingularSystemError(
                f"row {i}: singular functional-map system"
            ) from exc
        factors.append(factor)
        c[i] = cho_solve(factor, rhs[:, i])
    return c, factors


def _spatial_embed(shape, a_vals, config):
    """Rows of Phi A entering the soft map, restricted to an FPS subset if set."""
    if config.fps_count is not None:
        idx = shape.fps_indices(config.fps_count, config.seed)
    else:
        idx = slice(None)
    phi = shape.basis.phi[idx]
    mass = shape.basis.mass[idx]
    if config.fps_count is not None:
        # reweight so the sampled masses keep the full surface measure
        mass = mass * (shape.basis.mass.sum() / mass.sum())
    return phi, mass, phi @ a_vals


def _spatial_map(shape_i, shape_j, a1_vals, a2_vals, alpha, config):
    """Soft map and induced functional map for one direction; returns a tape."""
    a1h, a2h, v_hat = a1_vals, a2_vals, None
    if config.svd_m is not None:
        # projection directions are held fixed (not differentiated through)
        _, _, vt = np.linalg.svd(a1_vals, full_matrices=True)
        v_hat = vt[:config.svd_m].T
        a1h = a1_vals @ v_hat
        a2h = a2_vals @ v_hat
    phi_i, _, emb_i = _spatial_embed(shape_i, a1h, config)
    phi_j, mass_j, emb_j = _spatial_embed(shape_j, a2h, config)
    pi, delta = _soft_rows(emb_i, emb_j, alpha)
    weighted_j = phi_j * mass_j[:, None]
    c2 = weighted_j.T @ (pi @ phi_i)
    tape = {
        "pi": pi, "delta": delta, "emb_i": emb_i, "emb_j": emb_j,
        "phi_i": phi_i, "phi_j": phi_j, "weighted_j": weighted_j, "v_hat": v_hat,
    }
    return c2, tape


def _forward(model, shape_i, shape_j, alpha, config):
    if shape_i.basis.k != shape_j.basis.k:
        raise ValueError("paired shapes must share the basis size")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    a_i = model.coeff(shape_i)
    a_j = model.coeff(shape_j)
    lam1, lam2 = shape_i.basis.lam, shape_j.basis.lam
    gap = (lam1[None, :] - lam2[:, None]) ** 2
    tape = {"a_i": a_i, "a_j": a_j, "lam1": lam1, "lam2": lam2, "gap": gap,
            "alpha": alpha}

    c1_vals = c2_vals = None
    if config.mode in (TWO_BRANCH, SPECTRAL_ONLY):
        c1_vals, tape["factors"] = _solve_rows(
            a_i.values, a_j.values, lam1, lam2, config.lam
        )
    if config.mode in (TWO_BRANCH, SPATIAL_ONLY):
        c2_vals, tape["spatial"] = _spatial_map(
            shape_i, shape_j, a_i.values, a_j.values, alpha, config
        )

    # the branch the structural terms score: C1 when present, else C2
    scored = c1_vals if c1_vals is not None else c2_vals
    tape["scored"] = scored

    terms = {
        "orth": float(((scored.T @ scored - np.eye(scored.shape[0])) ** 2).sum()),
        "desc": float(((scored @ a_i.values - a_j.values) ** 2).sum()),
        "lap": float((scored ** 2 * gap).sum()),
        "consist": 0.0,
        "bij": 0.0,
    }
    if config.mode == TWO_BRANCH:
        terms["consist"] = float(((c1_vals - c2_vals) ** 2).sum())

    if config.w_bij > 0.0:
        if config.mode in (TWO_BRANCH, SPECTRAL_ONLY):
            rev_vals, tape["factors_rev"] = _solve_rows(
                a_j.values, a_i.values, lam2, lam1, config.lam
            )
        else:
            rev_vals, tape["spatial_rev"] = _spatial_map(
                shape_j, shape_i, a_j.values, a_i.values, alpha, config
            )
        tape["rev"] = rev_vals
        terms["bij"] = float(((rev_vals @ scored - np.eye(scored.shape[0])) ** 2).sum())

    c1 = FunctionalMap(c1_vals if c1_vals is not None else c2_vals,
                       source_id=shape_i.id, target_id=shape_j.id)
    c2 = FunctionalMap(c2_vals if c2_vals is not None else c1_vals,
                       source_id=shape_i.id, target_id=shape_j.id)
    out = PairOutput(a_i, a_j, c1, c2, terms)
    return out, tape


def backward_pair(model, shape_i, shape_j, alpha, config):
    """Exact gradient of the weighted pair loss w.r.t. the model parameters.

    Reverse-mode through matrix products, the descriptor projection, each
    row-wise SPD solve (adjoint of the symmetric system), the row softmax
    and the embedding norms (subgradient 0 at zero distance). Returns
    (PairOutput, grads) with grads keyed like model.params.
    """
    out, tape = _forward(model, shape_i, shape_j, alpha, config)
    a1, a2 = tape["a_i"].values, tape["a_j"].values
    gap = tape["gap"]
    scored = tape["scored"]
    k = scored.shape[0]
    eye = np.eye(k)

    d_a1 = np.zeros_like(a1)
    d_a2 = np.zeros_like(a2)

    # structural terms on the scored branch
    d_scored = (
        config.w_orth * 4.0 * scored @ (scored.T @ scored - eye)
        + config.w_desc * 2.0 * (scored @ a1 - a2) @ a1.T
        + config.w_lap * 2.0 * scored * gap
    )
    d_a1 += config.w_desc * 2.0 * scored.T @ (scored @ a1 - a2)
    d_a2 += -config.w_desc * 2.0 * (scored @ a1 - a2)

    d_rev = None
    if config.w_bij > 0.0:
        rev = tape["rev"]
        b = rev @ scored - eye
        d_scored += config.w_bij * 2.0 * rev.T @ b
        d_rev = config.w_bij * 2.0 * b @ scored.T

    if config.mode == TWO_BRANCH:
        c1_vals = out.c1.values
        c2_vals = out.c2.values
        diff = c1_vals - c2_vals
        d_c1 = d_scored + config.w_consist * 2.0 * diff
        d_c2 = -config.w_consist * 2.0 * diff
    elif config.mode == SPECTRAL_ONLY:
        d_c1, d_c2 = d_scored, None
    else:
        d_c1, d_c2 = None, d_scored

    if d_c1 is not None:
        g1, g2 = _solve_rows_backward(
            tape["factors"], out.c1.values, d_c1, a1, a2
        )
        d_a1 += g1
        d_a2 += g2
        if d_rev is not None and "factors_rev" in tape:
            g2r, g1r = _solve_rows_backward(
                tape["factors_rev"], tape["rev"], d_rev, a2, a1
            )
            d_a2 += g2r
            d_a1 += g1r
    if d_c2 is not None:
        g1, g2 = _spatial_backward(tape["spatial"], d_c2, alpha)
        d_a1 += g1
        d_a2 += g2
        if d_rev is not None and "spatial_rev" in tape:
            g2r, g1r = _spatial_backward(tape["spatial_rev"], d_rev, alpha)
            d_a2 += g2r
            d_a1 += g1r

    grads = model.zero_grad_like()
    if model.mode == SHARED_LINEAR:
        grads["theta"] += shape_i.projected_descriptors.T @ d_a1
        grads["theta"] += shape_j.projected_descriptors.T @ d_a2
    else:
        grads[f"A:{shape_i.id}"] += d_a1
        grads[f"A:{shape_j.id}"] += d_a2
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}")
    return out, grads


def _solve_rows_backward(factors, c_vals, d_c, a1, a2):
    """Adjoint of the row-wise solves: gradients w.r.t. A1 (source) and A2."""
    k = c_vals.shape[0]
    mu = np.empty((k, k))
    for i in range(k):
        mu[i] = cho_solve(factors[i], d_c[i])
    d_a1 = mu.T @ a2 - (mu.T @ c_vals + c_vals.T @ mu) @ a1
    d_a2 = mu @ a1
    return d_a1, d_a2


def _spatial_backward(sp, d_c2, alpha):
    """Backprop d_c2 through C2 = Phi_j^T M_j Pi Phi_i and the soft rows."""
    pi, delta = sp["pi"], sp["delta"]
    emb_i, emb_j = sp["emb_i"], sp["emb_j"]
    d_pi = sp["weighted_j"] @ d_c2 @ sp["phi_i"].T
    # softmax rows: dS = Pi * (dPi - rowsum(dPi * Pi)); logits S = -alpha delta
    d_s = pi * (d_pi - (d_pi * pi).sum(axis=1, keepdims=True))
    d_delta = -alpha * d_s
    w = np.zeros_like(delta)
    np.divide(d_delta, delta, out=w, where=delta > 0.0)
    col_w = w.sum(axis=0)
    row_w = w.sum(axis=1)
    d_emb_i = col_w[:, None] * emb_i - w.T @ emb_j
    d_emb_j = row_w[:, None] * emb_j - w @ emb_i
    d_a1h = sp["phi_i"].T @ d_emb_i
    d_a2h = sp["phi_j"].T @ d_emb_j
    if sp["v_hat"] is not None:
        return d_a1h @ sp["v_hat"].T, d_a2h @ sp["v_hat"].T
    return d_a1h, d_a2h


class AdamOptimizer:
    """Standard first-order adaptive-moment updates over named parameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(shapes, config, model=None, callback=None):
    """Train over all ordered pairs, one pair per step, seeded shuffling.

    One epoch is one pass over the shuffled ordered-pair list (or
    config.epoch_len steps when set); the softmax sharpness advances by
    alpha_step at each epoch boundary. Returns (model, history) where
    history has one record per iteration with every loss term and alpha.
    Raises TrainingDivergenceError (history attached) if the total loss
    passes 1e12.
    """
    if len(shapes) < 2:
        raise ValueError("need at least two shapes to form training pairs")
    pairs = [(i, j) for i in range(len(shapes)) for j in range(len(shapes)) if i != j]
    epoch_len = config.epoch_len or len(pairs)
    schedule = AlphaSchedule(config.alpha0, config.alpha_step, epoch_len)
    if model is None:
        model = FeatureModel.shared_linear(
            shapes[0].desc.d, config.d, seed=config.seed
        )
    opt = AdamOptimizer(model.params, config.lr)
    rng = np.random.default_rng(config.seed)
    history = []

    order = rng.permutation(len(pairs))
    pos = 0
    for it in range(config.iterations):
        epoch = it // epoch_len
        alpha = schedule.at_epoch(epoch)
        if pos >= len(order):
            order = rng.permutation(len(pairs))
            pos = 0
        i, j = pairs[order[pos]]
        pos += 1
        out, grads = backward_pair(model, shapes[i], shapes[j], alpha, config)
        loss = total_loss(out, config)
        rec = {
            "iteration": it, "epoch": epoch, "alpha": alpha,
            "pair": f"{shapes[i].id}->{shapes[j].id}",
            "orth": out.loss_terms["orth"], "consist": out.loss_terms["consist"],
            "desc": out.loss_terms["desc"], "lap": out.loss_terms["lap"],
            "bij": out.loss_terms["bij"], "total": loss,
        }
        history.append(rec)
        if not np.isfinite(loss) or loss > 1e12:
            raise TrainingDivergenceError(
                f"loss {loss:.3e} at iteration {it} exceeds the divergence guard",
                history,
            )
        opt.step(model.params, grads)
        if callback is not None:
            callback(it, model, rec)
    return model, history


def finite_difference_check(model, shape_i, shape_j, alpha, config, epsilon=1e-5):
    """Max relative disagreement between analytic and central-difference gradients.

    Perturbs every parameter entry by +/- epsilon; intended for small
    instances. The relative error uses max(|g_fd|, |g|, 1e-12) as the
    denominator.
    """
    _, grads = backward_pair(model, shape_i, shape_j, alpha, config)
    worst = 0.0
    for name, values in model.params.items():
        flat = values.ravel()
        g_flat = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            hi = total_loss(forward_pair(model, shape_i, shape_j, alpha, config), config)
            flat[idx] = orig - epsilon
            lo = total_loss(forward_pair(model, shape_i, shape_j, alpha, config), config)
            flat[idx] = orig
            g_fd = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(g_fd), abs(g_flat[idx]), 1e-12)
            worst = max(worst, abs(g_fd - g_flat[idx]) / denom)
    return worst
