"""Recovery metrics for simulate-and-recover scoring.

Latent factor models are identifiable only up to rotation (orthonormal
mixing) and permutation (factor labels), so raw elementwise comparison
of latents is meaningless.  The metrics here quotient those symmetries
out: canonical correlations for shared-response time courses, optimal
one-to-one assignment for factor centers.
"""

import numpy as np
import scipy.optimize
import scipy.spatial.distance

from .errors import BadShape

__all__ = [
    "canonical_correlations",
    "aligned_recovery_score",
    "matched_center_error",
    "pearson",
]


def canonical_correlations(true, est):
    """Canonical correlations between the row spaces of two K x T arrays.

    Invariant to any invertible mixing of rows, in particular to the
    orthogonal rotations left free by shared-response objectives.
    Values are in [0, 1], one per factor dimension.
    """
    true = np.asarray(true, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if true.ndim != 2 or est.ndim != 2 or true.shape[1] != est.shape[1]:
        raise BadShape("need K x T arrays over a common T")
    qt, _ = np.linalg.qr(true.T)
    qe, _ = np.linalg.qr(est.T)
    s = np.linalg.svd(qt.T @ qe, compute_uv=False)
    return np.clip(s, 0.0, 1.0)


def aligned_recovery_score(true, est):
    """Mean canonical correlation after optimal orthogonal alignment.

    1 when ``est`` equals any rotation of ``true``; near 0 for
    independent signals with T large.  Bounded in [-1, 1] (in practice
    [0, 1]).
    """
    return float(np.mean(canonical_correlations(true, est)))


def matched_center_error(true_centers, est_centers):
    """Mean distance between center sets under optimal assignment.

    Hungarian matching absorbs the factor-label permutation; the score
    is the mean Euclidean distance over matched pairs.
    """
    true_centers = np.atleast_2d(np.asarray(true_centers, dtype=np.float64))
    est_centers = np.atleast_2d(np.asarray(est_centers, dtype=np.float64))
    if true_centers.shape != est_centers.shape:
        raise BadShape("center sets must have identical shape")
    dist = scipy.spatial.distance.cdist(true_centers, est_centers)
    rows, cols = scipy.optimize.linear_sum_assignment(dist)
    return float(dist[rows, cols].mean())


def pearson(a, b):
    """Plain Pearson correlation of two flattened arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise BadShape("size mismatch")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 0.0
    return float(a @ b / denom)
