"""Absolute registration of VIO point clouds against the map database.

Pipeline per keyframe: gate tracked features on reprojection error, yaw
the reconstructed points into geodetic axes with the flight's first
compass heading, match descriptors against the map, vote over per-match
translation hypotheses, shift the inlier points by the winning
translation, and refine the full 6-DoF camera pose by minimizing pixel
reprojection error over the inliers. An image-warp baseline replaces the
reconstructed points with a nadir similarity warp of the raw pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .frames import (
    CameraIntrinsics,
    Extrinsics,
    MapGeometry,
    Pose,
    Quat,
    body_position_from_camera,
    camera_pose_from_body,
    rotate_world_to_geo,
    warp_image_point,
    yaw_rotation,
)
from .mapdb import MapFeatureDB, MatchSet, match_descriptors
from .simulation import VioOutput, reconstruct_point

__all__ = [
    "RegistrationParams",
    "QueryPointSet",
    "VoteResult",
    "PnpResult",
    "RegistrationResult",
    "RegistrationFailure",
    "build_query_set",
    "heading_align",
    "translation_vote",
    "apply_translation",
    "pnp_reprojection_residual",
    "pnp_jacobian",
    "pnp_solve",
    "register_keyframe",
    "baseline_image_register",
    "is_true_match",
]

# true-match rule: a registration counts as correct when it kept at least
# this many inliers and landed within this horizontal distance of truth
TRUE_MATCH_MIN_INLIERS = 8
TRUE_MATCH_MAX_ERROR_M = 30.0


@dataclass(frozen=True)
class RegistrationParams:
    """Thresholds for the per-keyframe registration pipeline."""

    reproj_threshold: float = 8.0       # px, feature quality gate
    min_points: int = 20                # gated features needed to attempt
    inlier_radius: float = 9.0          # m, translation-vote agreement radius
    min_inliers: int = 15               # votes required to declare success
    ratio: float = 1.0                  # descriptor ratio test; 1 disables


@dataclass(frozen=True)
class QueryPointSet:
    """Gated features of one keyframe, ready for map registration.

    points_w are the inverse-depth reconstructions in the odometry frame;
    pixels are the same features' image observations, kept for the
    reprojection refinement. vio_pose is the keyframe's estimated body
    pose in W (seed for the refinement and altitude source).
    """

    keyframe: int
    descriptors: np.ndarray
    points_w: np.ndarray
    pixels: np.ndarray
    heading: float
    altitude: float
    vio_pose: Pose

    def __len__(self) -> int:
        return self.points_w.shape[0]


@dataclass(frozen=True)
class VoteResult:
    success: bool
    translation: np.ndarray | None
    inlier_indices: np.ndarray  # indices into the match arrays
    best_count: int


@dataclass(frozen=True)
class PnpResult:
    pose: Pose
    reproj_rmse: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RegistrationResult:
    keyframe: int
    translation: np.ndarray          # (3,), z identically 0
    inlier_pairs: np.ndarray         # (k, 2) of (feature index, map index)
    inlier_count: int
    camera_pose: Pose                # T^G_C
    body_position: np.ndarray        # (3,), consistent with camera_pose
    reproj_rmse: float | None        # px; None for the image-warp baseline


@dataclass(frozen=True)
class RegistrationFailure:
    keyframe: int
    stage: str                       # "matching" | "voting" | "pnp"
    detail: str


def build_query_set(
    vio: VioOutput,
    reproj_threshold: float,
    min_points: int,
    intr: CameraIntrinsics,
    ext: Extrinsics,
) -> QueryPointSet | None:
    """Gate a keyframe's features and reconstruct the survivors.

    Features with reprojection error <= reproj_threshold are retained;
    returns None (keyframe skipped) when fewer than min_points survive.
    """
    keep = vio.reproj_errors <= reproj_threshold
    if int(np.count_nonzero(keep)) < min_points:
        return None
    pixels = vio.pixels[keep]
    points_w = reconstruct_point(vio.pose, pixels, vio.inv_depths[keep], intr, ext)
    return QueryPointSet(
        keyframe=vio.index,
        descriptors=vio.descriptors[keep],
        points_w=points_w,
        pixels=pixels,
        heading=vio.compass_heading,
        altitude=vio.altitude,
        vio_pose=vio.pose,
    )


def heading_align(points_w, first_heading: float) -> np.ndarray:
    """Rotate reconstructed points onto geodetic axes.

    Uses the compass heading of the flight's first keyframe: the odometry
    frame is anchored with that keyframe at zero yaw, so one yaw rotation
    maps the whole point cloud (up to compass error and accumulated yaw
    drift, which the vote radius absorbs).
    """
    return rotate_world_to_geo(points_w, first_heading)


def translation_vote(
    points_geo,
    matches: MatchSet,
    db: MapFeatureDB,
    inlier_radius: float,
    min_inliers: int,
) -> VoteResult:
    """Find the 2-D translation most match pairs agree on.

    Every match contributes the hypothesis t = map_position - point_xy.
    A hypothesis' inliers are all matches whose own t differs by less than
    inlier_radius (strict); the hypothesis with the most inliers wins, ties
    resolving to the lowest summed deviation and then the lowest match
    index. Success requires at least min_inliers agreeing votes; the
    returned translation is the mean of the inlier hypotheses.
    """
    pts = np.asarray(points_geo, dtype=float)
    n = len(matches)
    if n == 0:
        return VoteResult(False, None, np.zeros(0, dtype=np.int64), 0)
    t_all = db.positions[matches.map_indices] - pts[matches.query_indices][:, :2]
    d = np.linalg.norm(t_all[:, np.newaxis, :] - t_all[np.newaxis, :, :], axis=2)
    within = d < inlier_radius
    counts = within.sum(axis=1)
    best_count = int(counts.max())
    candidates = np.nonzero(counts == best_count)[0]
    if len(candidates) > 1:
        deviations = np.array([d[c, within[c]].sum() for c in candidates])
        candidates = candidates[deviations == deviations.min()]
    winner = int(candidates[0])
    inliers = np.nonzero(within[winner])[0]
    translation = t_all[inliers].mean(axis=0)
    return VoteResult(best_count >= min_inliers, translation, inliers, best_count)


def apply_translation(points, translation) -> np.ndarray:
    """Shift points horizontally by the voted translation (z untouched)."""
    t = np.asarray(translation, dtype=float)
    out = np.asarray(points, dtype=float).copy()
    out[..., 0] += t[0]
    out[..., 1] += t[1]
    return out


def _projection_partials(pts_c: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """d(pixel)/d(camera point) for each camera-frame point, (n, 2, 3)."""
    x, y, z = pts_c[:, 0], pts_c[:, 1], pts_c[:, 2]
    n = len(pts_c)
    out = np.zeros((n, 2, 3))
    out[:, 0, 0] = intr.fx / z
    out[:, 0, 2] = -intr.fx * x / z**2
    out[:, 1, 1] = intr.fy / z
    out[:, 1, 2] = -intr.fy * y / z**2
    return out


def pnp_reprojection_residual(pose: Pose, points, pixels, intr: CameraIntrinsics) -> np.ndarray:
    """Stacked (2n,) pixel residuals of world points projected by T^G_C."""
    pts_c = pose.inverse().transform(points)
    if np.any(pts_c[:, 2] <= 0.0):
        raise ValueError("point behind camera during refinement")
    u = intr.fx * pts_c[:, 0] / pts_c[:, 2] + intr.cx
    v = intr.fy * pts_c[:, 1] / pts_c[:, 2] + intr.cy
    return (np.stack([u, v], axis=1) - np.asarray(pixels, dtype=float)).ravel()


def pnp_jacobian(pose: Pose, points, intr: CameraIntrinsics) -> np.ndarray:
    """(2n, 6) Jacobian of the reprojection residual.

    Columns 0:3 are position increments in the world frame, columns 3:6
    are right-multiplied body-frame rotation increments (the retraction is
    q <- q * exp(dtheta)), matching pnp_solve's update rule.
    """
    pts = np.asarray(points, dtype=float)
    r_t = pose.rotation_matrix().T
    pts_c = (pts - pose.position) @ r_t.T
    dpix = _projection_partials(pts_c, intr)

    n = len(pts)
    jac = np.zeros((n, 2, 6))
    jac[:, :, :3] = dpix @ (-r_t)
    # d(pts_c)/d(dtheta) = [pts_c]_x
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1] = -pts_c[:, 2]
    skew[:, 0, 2] = pts_c[:, 1]
    skew[:, 1, 0] = pts_c[:, 2]
    skew[:, 1, 2] = -pts_c[:, 0]
    skew[:, 2, 0] = -pts_c[:, 1]
    skew[:, 2, 1] = pts_c[:, 0]
    jac[:, :, 3:] = np.einsum("nij,njk->nik", dpix, skew)
    return jac.reshape(2 * n, 6)


def pnp_solve(
    pixels,
    points,
    intr: CameraIntrinsics,
    initial: Pose,
    max_iterations: int = 50,
    tolerance: float = 1e-12,
) -> PnpResult:
    """Levenberg-Marquardt reprojection refinement of a camera pose.

    Needs at least 6 correspondences. Convergence: relative cost decrease
    below tolerance on an accepted step (or a vanishing gradient). A run
    that exhausts max_iterations without meeting that returns
    converged=False so callers can treat it as a stage failure.
    """
    px = np.asarray(pixels, dtype=float)
    pts = np.asarray(points, dtype=float)
    if px.shape[0] < 6:
        raise ValueError(f"PnP needs >= 6 correspondences, got {px.shape[0]}")
    if px.shape[0] != pts.shape[0]:
        raise ValueError("pixel/point count mismatch")

    pose = initial
    r = pnp_reprojection_residual(pose, pts, px, intr)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        jac = pnp_jacobian(pose, pts, intr)
        g = jac.T @ r
        if float(np.max(np.abs(g))) < 1e-10 or cost < 1e-20:
            converged = True
            break
        h = jac.T @ jac
        accepted = False
        for _ in range(12):
            try:
                delta = np.linalg.solve(h + lam * np.diag(np.diag(h)) + 1e-15 * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = Pose(pose.position + delta[:3], (pose.orientation * Quat.exp(delta[3:])).normalized())
            try:
                r_new = pnp_reprojection_residual(cand, pts, px, intr)
            except ValueError:
                lam *= 10.0
                continue
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                pose, r, cost = cand, r_new, cost_new
                lam = max(lam * 0.3, 1e-12)
                accepted = True
                if rel < tolerance or cost < 1e-20:
                    converged = True
                break
            lam *= 10.0
        if not accepted:
            # damping exhausted without a decrease: at a (possibly noisy)
            # minimum if the gradient is small, otherwise genuinely stuck
            converged = converged or float(np.max(np.abs(g))) <= 1e-6 * (1.0 + cost)
            break
        if converged:
            break
    rmse = math.sqrt(cost / r.size)  # per residual component (2 per point)
    return PnpResult(pose, rmse, iterations, converged)


def _seed_camera_pose(q: QueryPointSet, first_heading: float, translation, ext: Extrinsics) -> Pose:
    """Initial guess: the VIO camera pose yawed into G plus the voted shift."""
    cam_w = camera_pose_from_body(q.vio_pose, ext)
    rot = yaw_rotation(first_heading)
    pos = rot @ cam_w.position + np.array([translation[0], translation[1], 0.0])
    return Pose(pos, (Quat.from_yaw(first_heading) * cam_w.orientation).normalized())


def register_keyframe(
    q: QueryPointSet,
    db: MapFeatureDB,
    params: RegistrationParams,
    first_heading: float,
    intr: CameraIntrinsics,
    ext: Extrinsics,
) -> RegistrationResult | RegistrationFailure:
    """Full registration of one gated keyframe against the map."""
    pts_geo = heading_align(q.points_w, first_heading)
    matches = match_descriptors(q.descriptors, db, params.ratio)
    if len(matches) == 0:
        return RegistrationFailure(q.keyframe, "matching", "no descriptor matches")
    vote = translation_vote(pts_geo, matches, db, params.inlier_radius, params.min_inliers)
    if not vote.success:
        return RegistrationFailure(
            q.keyframe, "voting", f"best agreement {vote.best_count} < {params.min_inliers}"
        )
    feat_idx = matches.query_indices[vote.inlier_indices]
    aligned = apply_translation(pts_geo[feat_idx], vote.translation)
    if len(feat_idx) < 6:
        return RegistrationFailure(q.keyframe, "pnp", f"only {len(feat_idx)} inliers")
    seed = _seed_camera_pose(q, first_heading, vote.translation, ext)
    try:
        pnp = pnp_solve(q.pixels[feat_idx], aligned, intr, seed)
    except ValueError as e:
        return RegistrationFailure(q.keyframe, "pnp", str(e))
    if not pnp.converged:
        return RegistrationFailure(q.keyframe, "pnp", f"no convergence in {pnp.iterations} iterations")
    body = body_position_from_camera(pnp.pose, ext)
    pairs = np.stack([feat_idx, matches.map_indices[vote.inlier_indices]], axis=1)
    return RegistrationResult(
        keyframe=q.keyframe,
        translation=np.array([vote.translation[0], vote.translation[1], 0.0]),
        inlier_pairs=pairs,
        inlier_count=int(len(feat_idx)),
        camera_pose=pnp.pose,
        body_position=body,
        reproj_rmse=pnp.reproj_rmse,
    )


def baseline_image_register(
    q: QueryPointSet,
    db: MapFeatureDB,
    params: RegistrationParams,
    intr: CameraIntrinsics,
    geom: MapGeometry,
    ext: Extrinsics,
) -> RegistrationResult | RegistrationFailure:
    """Image-warp baseline: similarity-warp pixels to map scale, then vote.

    Assumes a nadir view: each pixel becomes a ground displacement from
    the camera's (unknown) ground point via s * R2(heading), the identical
    vote recovers that ground point, and the altitude is copied from the
    VIO. No reprojection refinement; the reported camera pose is a level
    body at the keyframe's compass heading composed with the mount, which
    keeps the body/camera consistency rule of the main pipeline.
    """
    disp_px = warp_image_point(q.pixels, q.heading, q.altitude, intr, geom)
    pts_geo = np.column_stack(
        [disp_px[:, 0] * geom.resolution, -disp_px[:, 1] * geom.resolution, np.zeros(len(q))]
    )
    matches = match_descriptors(q.descriptors, db, params.ratio)
    if len(matches) == 0:
        return RegistrationFailure(q.keyframe, "matching", "no descriptor matches")
    vote = translation_vote(pts_geo, matches, db, params.inlier_radius, params.min_inliers)
    if not vote.success:
        return RegistrationFailure(
            q.keyframe, "voting", f"best agreement {vote.best_count} < {params.min_inliers}"
        )
    body = np.array([vote.translation[0], vote.translation[1], q.altitude])
    cam = camera_pose_from_body(Pose(body, Quat.from_yaw(q.heading)), ext)
    feat_idx = matches.query_indices[vote.inlier_indices]
    pairs = np.stack([feat_idx, matches.map_indices[vote.inlier_indices]], axis=1)
    return RegistrationResult(
        keyframe=q.keyframe,
        translation=np.array([vote.translation[0], vote.translation[1], 0.0]),
        inlier_pairs=pairs,
        inlier_count=int(len(feat_idx)),
        camera_pose=cam,
        body_position=body,
        reproj_rmse=None,
    )


def is_true_match(
    result: RegistrationResult,
    truth_position,
    min_inliers: int = TRUE_MATCH_MIN_INLIERS,
    max_error_m: float = TRUE_MATCH_MAX_ERROR_M,
) -> bool:
    """Correct-registration rule: enough inliers and close enough to truth.

    The distance check is horizontal (East/North) only.
    """
    if result.inlier_count < min_inliers:
        return False
    err = np.asarray(truth_position, dtype=float)[:2] - result.body_position[:2]
    return bool(np.linalg.norm(err) <= max_error_m)
