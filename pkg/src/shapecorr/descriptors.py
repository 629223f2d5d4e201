"""Wave kernel signatures: the fixed per-vertex input signal for feature models."""

import numpy as np


class DescriptorSet:
    """Per-vertex descriptor matrix with its energy grid and bandwidth.

    Attributes
    ----------
    values : (n, d) nonnegative matrix, one column per energy sample,
        each column rescaled to mean 1
    energies : (d,) log-energy sample points
    sigma : Gaussian bandwidth in log-energy
    """

    def __init__(self, values, energies, sigma):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.energies = np.asarray(energies, dtype=np.float64)
        self.sigma = float(sigma)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


def wks(basis, d):
    """Wave kernel signature of every vertex at d energy samples.

    The constant eigenfunction is skipped. Energies are uniform on
    [log lam_2 + 2 sigma, log lam_k - 2 sigma] with
    sigma = 7 (log lam_k - log lam_2) / d, the usual heuristic. Each raw
    column (fixed energy) is a convex combination of the squared
    eigenfunctions; columns are then rescaled to unit sum and re-multiplied
    by n so every column has mean 1, keeping loss scales comparable
    across d.
    """
    d = int(d)
    if d < 2:
        raise ValueError("need at least 2 energy samples")
    if basis.k < 2:
        raise ValueError("basis must have at least 2 eigenpairs")
    lam = basis.lam[1:]
    if lam[0] <= 0.0:
        raise ValueError("second eigenvalue must be positive (connected mesh?)")
    log_lam = np.log(lam)
    e_min, e_max = float(log_lam[0]), float(log_lam[-1])
    if e_max <= e_min:
        raise ValueError("eigenvalue range too narrow for a WKS energy grid")
    sigma = 7.0 * (e_max - e_min) / d
    energies = np.linspace(e_min + 2.0 * sigma, e_max - 2.0 * sigma, d)

    # weights[t, l] -> Gaussian window of energy t on log eigenvalue l
    weights = np.exp(-((energies[:, None] - log_lam[None, :]) ** 2) / (2.0 * sigma ** 2))
    weights /= weights.sum(axis=1, keepdims=True)
    values = (basis.phi[:, 1:] ** 2) @ weights.T

    col_sums = values.sum(axis=0)
    if (col_sums <= 0.0).any():
        raise ValueError("WKS column with non-positive sum")
    values = values / col_sums[None, :] * basis.n
    return DescriptorSet(values, energies, sigma)
