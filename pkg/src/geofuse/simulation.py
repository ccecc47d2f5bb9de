"""Synthetic world and visual-inertial front-end.

Generates a flat georeferenced world of descriptor-tagged ground landmarks,
flies a vehicle over it, and emits per-keyframe odometry the way a
visual-inertial system would: a drifting pose in a gravity-aligned local
frame W, tracked features with noisy pixels and inverse depths, a compass
heading, and an altitude readout.

Drift model (documented so the Monte-Carlo checks are self-consistent):
position error is a slow bias ramp plus a Gaussian random walk,

    e(D) = u * D + w(D)

where u is drawn once per run (the collapsed effect of the unmodeled
inertial biases) with per-axis sigma fixed by the mean identities
E[|u|] = rate (Rayleigh in 2D, half-normal in 1D), and w takes one
Gaussian increment per keyframe with sigma = 0.3 * rate * step_distance.
Hence

    E[ |horizontal error| ] = drift_rate * cumulative_distance

to a relative error under 0.1% whenever the keyframe spacing is small
against the distance flown, and the per-keyframe relative error stays
bounded, as for a real odometry stack. Vertical drift runs at a twentieth
of the horizontal rate (gravity keeps height far better observed); yaw
drift follows the same construction with yaw_drift_rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frames import (
    CameraIntrinsics,
    Extrinsics,
    MapGeometry,
    Pose,
    Quat,
    back_project,
    camera_pose_from_body,
    euler_zyx_from_matrix,
    map_pixel_to_geodetic,
    matrix_from_euler_zyx,
    project,
    rotation_about_axis,
    yaw_rotation,
)

__all__ = [
    "WorldModel",
    "TrajectorySpec",
    "TrueTrajectory",
    "NoiseConfig",
    "VioOutput",
    "generate_world",
    "generate_trajectory",
    "simulate_keyframe",
    "simulate_vio",
    "reconstruct_point",
    "synthesize_descriptor",
]

# tilt oscillation periods (seconds); direction precesses slowly so the
# tilt magnitude itself is the sinusoid and mean |tilt| = amplitude * 2/pi
_TILT_PERIOD_S = 17.0
_TILT_DIRECTION_PERIOD_S = 47.0

_MIN_RANGE_FACTOR = 0.05  # guard: noisy range stays positive

_WALK_FRACTION = 0.3  # random-walk share of the drift rate (the bias ramp dominates)
_VERTICAL_DRIFT_FRACTION = 0.05  # vertical drift rate relative to horizontal


@dataclass(frozen=True)
class WorldModel:
    """Flat ground-plane world: landmark positions (N, 3) and unit descriptors (N, d)."""

    geom: MapGeometry
    positions: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        object.__setattr__(self, "descriptors", np.asarray(self.descriptors, dtype=float))

    @property
    def landmark_count(self) -> int:
        return self.positions.shape[0]

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class TrajectorySpec:
    """Waypoint flight plan: constant speed and altitude, sinusoidal tilt."""

    waypoints: tuple
    speed: float
    altitude: float
    keyframe_interval: float
    roll_pitch_amplitude: float = 0.0

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[0] < 2 or wp.shape[1] != 2:
            raise ValueError("waypoints must be at least two [East, North] pairs")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.altitude <= 0:
            raise ValueError("altitude must be positive")
        if self.keyframe_interval <= 0:
            raise ValueError("keyframe interval must be positive")
        object.__setattr__(self, "waypoints", tuple(map(tuple, wp)))


@dataclass(frozen=True)
class TrueTrajectory:
    """Ground-truth keyframe poses T^G_B plus headings, times, path distance."""

    poses: tuple
    headings: np.ndarray
    times: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses])


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement and drift noise for the simulated front-end.

    All sigmas are standard deviations; descriptor noise is per component
    before re-normalization. outlier_fraction replaces a feature's
    descriptor with a random unit vector (a wrong-association stand-in).
    roll_pitch_bound is the half-width of the uniform gravity-alignment
    error, so roll/pitch errors are strictly bounded by it.
    """

    pixel_sigma: float = 0.5
    inv_depth_rel_sigma: float = 0.02
    descriptor_sigma: float = 0.05
    compass_bias: float = 0.01
    compass_sigma: float = 0.005
    drift_rate: float = 0.03
    yaw_drift_rate: float = 2.0e-5
    outlier_fraction: float = 0.05
    distractor_count: int = 0
    roll_pitch_bound: float = 0.003

    def __post_init__(self):
        for name in (
            "pixel_sigma",
            "inv_depth_rel_sigma",
            "descriptor_sigma",
            "compass_sigma",
            "drift_rate",
            "yaw_drift_rate",
            "roll_pitch_bound",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.distractor_count < 0:
            raise ValueError("distractor_count must be >= 0")

    @staticmethod
    def zero() -> "NoiseConfig":
        return NoiseConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0)


@dataclass(frozen=True)
class VioOutput:
    """One keyframe of front-end output, expressed in the local frame W.

    Feature arrays are index-aligned: ids (m,), pixels (m, 2),
    inv_depths (m,), reproj_errors (m,), descriptors (m, d).
    reproj_errors is the track-consistency residual: the keyframe's
    reconstruction reprojected into the previous keyframe of the same
    track, compared against the pixel stored there; the first observation
    of a track reports 0.
    """

    index: int
    time: float
    pose: Pose
    ids: np.ndarray
    pixels: np.ndarray
    inv_depths: np.ndarray
    reproj_errors: np.ndarray
    descriptors: np.ndarray
    altitude: float
    compass_heading: float

    @property
    def feature_count(self) -> int:
        return int(self.ids.shape[0])


def generate_world(
    seed,
    landmark_count: int,
    geom: MapGeometry,
    descriptor_dim: int,
    *,
    grid_stride_px: int | None = None,
) -> WorldModel:
    """Scatter landmarks uniformly over the map extent with unit descriptors.

    grid_stride_px, when given, snaps landmark positions onto that map-pixel
    grid at generation time, which makes downstream database quantization
    lossless (used by the noiseless end-to-end preset).
    """
    if landmark_count <= 0:
        raise ValueError("landmark_count must be positive")
    if descriptor_dim < 8:
        raise ValueError("descriptor_dim must be at least 8")
    rng = np.random.default_rng(seed)
    px = rng.uniform([0.0, 0.0], [geom.width_px, geom.height_px], size=(landmark_count, 2))
    if grid_stride_px is not None:
        if grid_stride_px <= 0:
            raise ValueError("grid_stride_px must be positive")
        px = np.round(px / grid_stride_px) * grid_stride_px
        px[:, 0] = np.clip(px[:, 0], 0, (geom.width_px // grid_stride_px) * grid_stride_px)
        px[:, 1] = np.clip(px[:, 1], 0, (geom.height_px // grid_stride_px) * grid_stride_px)
    en = map_pixel_to_geodetic(px, geom)
    positions = np.column_stack([en, np.zeros(landmark_count)])
    desc = rng.normal(size=(landmark_count, descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return WorldModel(geom, positions, desc)


def _polyline_arclength(waypoints: np.ndarray) -> np.ndarray:
    seg = np.diff(waypoints, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(seg, axis=1))])


def generate_trajectory(seed, spec: TrajectorySpec) -> TrueTrajectory:
    """Constant-speed flight along the waypoint polyline.

    Keyframes are spaced keyframe_interval seconds apart, including both
    endpoints of the flight. Heading is the along-track direction smoothed
    over a 3-keyframe window; roll and pitch come from a sinusoidal tilt
    magnitude (amplitude = roll_pitch_amplitude) about a slowly precessing
    horizontal axis, so the camera axis tilt from vertical is |A sin(wt)|.
    """
    rng = np.random.default_rng(seed)
    wp = np.asarray(spec.waypoints, dtype=float)
    arc = _polyline_arclength(wp)
    total_len = arc[-1]
    if total_len <= 0:
        raise ValueError("waypoint polyline has zero length")
    total_time = total_len / spec.speed
    n = int(math.floor(total_time / spec.keyframe_interval + 1e-9)) + 1
    times = np.arange(n) * spec.keyframe_interval
    dist = np.minimum(times * spec.speed, total_len)

    east = np.interp(dist, arc, wp[:, 0])
    north = np.interp(dist, arc, wp[:, 1])

    # along-track direction per keyframe, from the segment it lies on
    seg_idx = np.clip(np.searchsorted(arc, dist, side="right") - 1, 0, len(wp) - 2)
    seg_dir = np.diff(wp, axis=0)
    seg_dir /= np.linalg.norm(seg_dir, axis=1, keepdims=True)
    dirs = seg_dir[seg_idx]
    smoothed = dirs.copy()
    if n >= 3:
        smoothed[1:-1] = (dirs[:-2] + dirs[1:-1] + dirs[2:]) / 3.0
    headings = np.arctan2(smoothed[:, 1], smoothed[:, 0])

    phase_m = rng.uniform(0.0, 2.0 * math.pi)
    phase_d = rng.uniform(0.0, 2.0 * math.pi)
    tilt_mag = spec.roll_pitch_amplitude * np.sin(2.0 * math.pi * times / _TILT_PERIOD_S + phase_m)
    tilt_dir = 2.0 * math.pi * times / _TILT_DIRECTION_PERIOD_S + phase_d

    poses = []
    for k in range(n):
        r = yaw_rotation(headings[k])
        if tilt_mag[k] != 0.0:
            axis = np.array([math.cos(tilt_dir[k]), math.sin(tilt_dir[k]), 0.0])
            r = r @ rotation_about_axis(axis, tilt_mag[k])
        poses.append(Pose(np.array([east[k], north[k], spec.altitude]), Quat.from_matrix(r)))
    return TrueTrajectory(tuple(poses), headings, times, dist)


def synthesize_descriptor(descriptor, sigma: float, rng) -> np.ndarray:
    """Unit-norm copy of `descriptor` with per-component Gaussian noise."""
    d = np.asarray(descriptor, dtype=float)
    if sigma > 0.0:
        d = d + rng.normal(scale=sigma, size=d.shape)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise ValueError("degenerate descriptor (zero norm after noise)")
    return d / n


def simulate_keyframe(pose_g_b: Pose, world: WorldModel, intr: CameraIntrinsics, ext: Extrinsics, noise: NoiseConfig, rng):
    """Observe the world from one true body pose.

    Returns (ids, pixels, ranges): landmark indices whose noiseless
    projection lands inside the image (0 <= u <= width, 0 <= v <= height,
    z > 0), their pixel observations with Gaussian noise applied, and the
    true camera-to-landmark ranges (the inverse-depth parameterization uses
    range along the viewing ray, not optical-axis depth).
    """
    cam = camera_pose_from_body(pose_g_b, ext)
    pts_c = cam.inverse().transform(world.positions)
    in_front = pts_c[:, 2] > 0.0
    ids = np.nonzero(in_front)[0]
    if ids.size == 0:
        return ids, np.zeros((0, 2)), np.zeros(0)
    px = project(pts_c[ids], intr)
    inside = (
        (px[:, 0] >= 0.0)
        & (px[:, 0] <= intr.width)
        & (px[:, 1] >= 0.0)
        & (px[:, 1] <= intr.height)
    )
    ids = ids[inside]
    px = px[inside]
    ranges = np.linalg.norm(pts_c[ids], axis=1)
    if noise.pixel_sigma > 0.0:
        px = px + rng.normal(scale=noise.pixel_sigma, size=px.shape)
    return ids, px, ranges


def reconstruct_point(vio_pose: Pose, pixel, inv_depth, intr: CameraIntrinsics, ext: Extrinsics) -> np.ndarray:
    """Landmark position in W from one observation and its inverse depth.

    P_W = T^W_B ( R^B_C (1/lambda) ray(pixel) + p^B_C ), where ray is the
    unit back-projection of the pixel. Accepts a single pixel or stacked
    (N, 2) pixels with matching (N,) inverse depths.
    """
    inv_depth = np.asarray(inv_depth, dtype=float)
    if np.any(inv_depth <= 0.0):
        raise ValueError("inverse depth must be positive")
    rays = back_project(pixel, intr)
    pts_c = rays / inv_depth[..., np.newaxis]
    pts_b = ext.rotation.rotate(pts_c) + ext.translation
    return vio_pose.transform(pts_b)


def _drift_profile(rng, distances: np.ndarray, rate: float, axes: int) -> np.ndarray:
    """Bias ramp plus random walk with E[|error|(D)] = rate * D (module docstring)."""
    n = len(distances)
    sigma_u = rate * (math.sqrt(2.0 / math.pi) if axes == 2 else math.sqrt(math.pi / 2.0))
    bias = rng.normal(0.0, sigma_u, size=axes)
    steps = np.diff(distances, prepend=0.0)
    step_sigma = _WALK_FRACTION * rate * steps
    walk = np.cumsum(rng.normal(size=(n, axes)) * step_sigma[:, np.newaxis], axis=0)
    return bias * distances[:, np.newaxis] + walk


def simulate_vio(
    truth: TrueTrajectory,
    world: WorldModel,
    intr: CameraIntrinsics,
    ext: Extrinsics,
    noise: NoiseConfig,
    seed,
) -> list[VioOutput]:
    """Run the simulated front-end over a true trajectory.

    The local frame W is anchored at the ground point directly below the
    first keyframe, with axes yawed by the first keyframe's true heading:
    the first estimated pose has zero yaw and near-zero position in W, and
    the W->G offset (initial position and heading) is what the
    georegistration stages later recover. Altitude readings are the
    estimated pose's own z (takeoff-on-flat-terrain datum).
    """
    if len(truth) == 0:
        raise ValueError("empty trajectory")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng_drift, rng_feat, rng_compass, rng_att = (np.random.default_rng(s) for s in ss.spawn(4))

    psi0 = float(truth.headings[0])
    anchor = truth.poses[0].position.copy()
    anchor[2] = 0.0
    g_from_w = Pose(anchor, Quat.from_yaw(psi0))
    w_from_g = g_from_w.inverse()

    dist = truth.distances
    pos_drift = np.zeros((len(truth), 3))
    pos_drift[:, :2] = _drift_profile(rng_drift, dist, noise.drift_rate, 2)
    pos_drift[:, 2:] = _drift_profile(rng_drift, dist, _VERTICAL_DRIFT_FRACTION * noise.drift_rate, 1)
    yaw_drift = _drift_profile(rng_drift, dist, noise.yaw_drift_rate, 1)[:, 0]

    outputs: list[VioOutput] = []
    last_seen: dict[int, tuple[int, np.ndarray]] = {}  # landmark id -> (keyframe, pixel)
    est_cam_inv: list[Pose] = []

    for k, pose_true_g in enumerate(truth.poses):
        pose_true_w = w_from_g.compose(pose_true_g)
        yaw_t, pitch_t, roll_t = euler_zyx_from_matrix(pose_true_w.rotation_matrix())
        d_pitch = rng_att.uniform(-noise.roll_pitch_bound, noise.roll_pitch_bound) if noise.roll_pitch_bound > 0 else 0.0
        d_roll = rng_att.uniform(-noise.roll_pitch_bound, noise.roll_pitch_bound) if noise.roll_pitch_bound > 0 else 0.0
        r_est = matrix_from_euler_zyx(yaw_t + yaw_drift[k], pitch_t + d_pitch, roll_t + d_roll)
        pose_est = Pose(pose_true_w.position + pos_drift[k], Quat.from_matrix(r_est))

        ids, pixels, ranges = simulate_keyframe(pose_true_g, world, intr, ext, noise, rng_feat)
        m = ids.size
        if noise.inv_depth_rel_sigma > 0.0 and m:
            ranges = ranges * np.maximum(1.0 + rng_feat.normal(scale=noise.inv_depth_rel_sigma, size=m), _MIN_RANGE_FACTOR)
        inv_depths = np.where(ranges > 0, 1.0 / np.maximum(ranges, 1e-12), 0.0)

        descs = np.empty((m, world.descriptor_dim))
        for i, lm in enumerate(ids):
            descs[i] = synthesize_descriptor(world.descriptors[lm], noise.descriptor_sigma, rng_feat)
        if noise.outlier_fraction > 0.0 and m:
            flips = rng_feat.random(m) < noise.outlier_fraction
            for i in np.nonzero(flips)[0]:
                v = rng_feat.normal(size=world.descriptor_dim)
                descs[i] = v / np.linalg.norm(v)

        # track-consistency reprojection error against the previous sighting
        errors = np.zeros(m)
        if m:
            recon_w = reconstruct_point(pose_est, pixels, inv_depths, intr, ext)
            for i, lm in enumerate(ids):
                seen = last_seen.get(int(lm))
                if seen is None:
                    continue
                k_prev, px_prev = seen
                p_c = est_cam_inv[k_prev].transform(recon_w[i])
                if p_c[2] <= 0.0:
                    errors[i] = np.inf
                else:
                    errors[i] = float(np.linalg.norm(project(p_c, intr) - px_prev))

        for i, lm in enumerate(ids):
            last_seen[int(lm)] = (k, pixels[i])
        est_cam_inv.append(camera_pose_from_body(pose_est, ext).inverse())

        compass = float(truth.headings[k]) + noise.compass_bias
        if noise.compass_sigma > 0.0:
            compass += rng_compass.normal(scale=noise.compass_sigma)

        outputs.append(
            VioOutput(
                index=k,
                time=float(truth.times[k]),
                pose=pose_est,
                ids=ids,
                pixels=pixels,
                inv_depths=inv_depths,
                reproj_errors=errors,
                descriptors=descs,
                altitude=float(pose_est.position[2]),
                compass_heading=compass,
            )
        )
    return outputs
