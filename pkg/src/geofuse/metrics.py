"""Trajectory and registration metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["AlignmentResult", "umeyama_align", "rmse", "match_rate"]


@dataclass(frozen=True)
class AlignmentResult:
    """Similarity transform mapping estimate -> truth: y ~ scale * R x + t."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    rmse: float

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def umeyama_align(estimate, truth) -> AlignmentResult:
    """Closed-form least-squares similarity alignment (rotation, scale, shift).

    Minimizes sum ||truth_i - (s R estimate_i + t)||^2 with the SVD
    solution, including the determinant correction that forbids
    reflections. Degenerate inputs (fewer than 3 points, zero spread, or
    collinear geometry) raise ValueError.
    """
    x = np.asarray(estimate, dtype=float)
    y = np.asarray(truth, dtype=float)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ValueError("expected matching (n, 3) point sets")
    n = x.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points to align")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    var_x = float((xc**2).sum()) / n
    if var_x < 1e-18:
        raise ValueError("degenerate geometry: estimate has zero spread")
    cov = yc.T @ xc / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise ValueError("degenerate geometry: points are collinear")
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[-1] = -1.0
    rot = u @ np.diag(s_fix) @ vt
    scale = float((d * s_fix).sum()) / var_x
    trans = mu_y - scale * rot @ mu_x
    aligned = scale * x @ rot.T + trans
    return AlignmentResult(scale, rot, trans, rmse(aligned - y))


def rmse(errors) -> float:
    """Root-mean-square of error vector norms (rows) or scalars."""
    e = np.asarray(errors, dtype=float)
    if e.size == 0:
        raise ValueError("rmse of empty error set")
    if e.ndim == 1:
        sq = e**2
    else:
        sq = (e**2).sum(axis=-1)
    return float(np.sqrt(sq.mean()))


def match_rate(true_matches: int, attempted: int) -> float:
    """Fraction of attempted registrations that were correct."""
    if attempted <= 0:
        raise ValueError("match rate undefined: no attempted registrations")
    if true_matches < 0 or true_matches > attempted:
        raise ValueError("true match count out of range")
    return true_matches / attempted
