"""Correspondence quality metrics: mean geodesic error (x100) and accuracy curves."""

import numpy as np

from .mesh import geodesic_distances


class GroundTruth:
    """Reference correspondence in the same layout as a PointMap.

    Attributes
    ----------
    assignment : (n_src,) int array of target vertex indices
    n_target : int, vertex count of the target shape
    mask : optional (n_src,) bool array; False marks unannotated vertices
    """

    def __init__(self, assignment, n_target, mask=None):
        self.assignment = np.asarray(assignment, dtype=np.int64)
        self.n_target = int(n_target)
        if self.assignment.size and (
            self.assignment.min() < 0 or self.assignment.max() >= self.n_target
        ):
            raise ValueError("ground-truth index out of range")
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != self.assignment.shape:
                raise ValueError("mask length must match assignment length")
        self.mask = mask


def geodesic_error(pred, gt, target_mesh):
    """Mean geodesic error (x100) of a predicted map against ground truth.

    err(p) is the graph-geodesic distance on the target mesh between the
    predicted and ground-truth images of source vertex p; masked vertices
    are skipped. The target mesh must be normalized to unit area (checked
    to 1e-6), matching the x100 error convention.

    Returns
    -------
    mean_x100 : float
    per_vertex : (n_kept,) array of raw (unscaled) errors
    """
    area = target_mesh.total_area()
    if abs(area - 1.0) > 1e-6:
        raise ValueError(
            f"target mesh area {area:.9f} is not 1; normalize before evaluating"
        )
    pred_assign = np.asarray(pred.assignment, dtype=np.int64)
    gt_assign = gt.assignment
    if pred_assign.shape != gt_assign.shape:
        raise ValueError("prediction and ground truth have different source layouts")
    keep = np.ones(gt_assign.shape[0], dtype=bool) if gt.mask is None else gt.mask
    pred_kept = pred_assign[keep]
    gt_kept = gt_assign[keep]
    errors = np.empty(gt_kept.shape[0])
    # one Dijkstra field per distinct ground-truth target vertex
    for g in np.unique(gt_kept):
        sel = gt_kept == g
        d = geodesic_distances(target_mesh, int(g))
        errors[sel] = d[pred_kept[sel]]
    return 100.0 * float(errors.mean()), errors


def accuracy_curve(errors, thresholds):
    """Fraction of errors at or below each threshold.

    Thresholds must be sorted ascending; the curve is monotone
    nondecreasing with values in [0, 1].
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size and (np.diff(thresholds) < 0).any():
        raise ValueError("thresholds must be sorted ascending")
    errors = np.asarray(errors, dtype=np.float64)
    if thresholds.size == 0:
        return np.empty(0)
    if errors.size == 0:
        raise ValueError("no errors to evaluate")
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)
