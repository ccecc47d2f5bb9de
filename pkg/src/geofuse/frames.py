"""Reference frames, rotations, and camera geometry.

Frame conventions used throughout the package:

    G : geodetic frame. East-North-Up, anchored at the upper-left corner of
        the georeferenced map. A map pixel (u, v) corresponds to the ground
        point [u * res, -v * res, 0] in G (v grows southward).
    W : local odometry frame of the visual-inertial front-end. Gravity
        aligned (z up); its horizontal origin and yaw offset relative to G
        are unknown to the estimator.
    B : vehicle body frame, x forward, y left, z up.
    C : camera frame, z along the optical axis, x right and y down in the
        image. The default mount looks straight down, so image v grows
        toward map v when the vehicle heading is zero.

Quaternions are Hamilton convention, stored [w, x, y, z]. A pose (p, q)
written T^A_B maps body-frame vectors into frame A: x_A = R(q) x_B + p.
Headings are measured counterclockwise from East about the Up axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Quat",
    "Pose",
    "CameraIntrinsics",
    "Extrinsics",
    "MapGeometry",
    "nadir_extrinsics",
    "yaw_rotation",
    "rotation_about_axis",
    "matrix_from_euler_zyx",
    "euler_zyx_from_matrix",
    "map_pixel_to_geodetic",
    "geodetic_to_map_pixel",
    "project",
    "back_project",
    "warp_image_point",
    "rotate_world_to_geo",
    "body_position_from_camera",
    "camera_pose_from_body",
]

_UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Quat:
    """Unit quaternion [w, x, y, z], Hamilton product convention."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "Quat":
        return Quat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_array(a) -> "Quat":
        w, x, y, z = (float(v) for v in a)
        return Quat(w, x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)

    def normalized(self) -> "Quat":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero quaternion")
        return Quat(self.w / n, self.x / n, self.y / n, self.z / n)

    def canonical(self) -> "Quat":
        """Same rotation with w >= 0 (fixes the double-cover sign)."""
        if self.w < 0.0:
            return Quat(-self.w, -self.x, -self.y, -self.z)
        return self

    def conjugate(self) -> "Quat":
        return Quat(self.w, -self.x, -self.y, -self.z)

    # unit quaternion: inverse == conjugate
    inverse = conjugate

    def __mul__(self, other: "Quat") -> "Quat":
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return Quat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def rotate(self, v) -> np.ndarray:
        """Rotate a 3-vector (or (N, 3) array) by this quaternion."""
        return np.asarray(v, dtype=float) @ self.to_matrix().T

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    @staticmethod
    def from_matrix(m) -> "Quat":
        """Quaternion from a rotation matrix (Shepperd's branch selection)."""
        m = np.asarray(m, dtype=float)
        t = np.trace(m)
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            q = Quat(
                0.25 * s,
                (m[2, 1] - m[1, 2]) / s,
                (m[0, 2] - m[2, 0]) / s,
                (m[1, 0] - m[0, 1]) / s,
            )
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = Quat(
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            )
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2]) * 2.0
            q = Quat(
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            )
        else:
            s = math.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2]) * 2.0
            q = Quat(
                (m[1, 0] - m[0, 1]) / s,
                (m[0, 2] + m[2, 0]) / s,
                (m[1, 2] + m[2, 1]) / s,
                0.25 * s,
            )
        return q.normalized().canonical()

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quat":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        half = 0.5 * angle
        s = math.sin(half) / n
        return Quat(math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s)

    @staticmethod
    def exp(rotvec) -> "Quat":
        """Quaternion exponential of a rotation vector (axis * angle)."""
        v = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            # second-order series keeps the map smooth through zero
            half = 0.5 * v
            q = Quat(1.0 - float(half @ half) / 2.0, half[0], half[1], half[2])
            return q.normalized()
        return Quat.from_axis_angle(v / angle, angle)

    @staticmethod
    def from_yaw(angle: float) -> "Quat":
        return Quat(math.cos(0.5 * angle), 0.0, 0.0, math.sin(0.5 * angle))


@dataclass(frozen=True)
class Pose:
    """Rigid transform T^A_B = (position of B origin in A, rotation B->A)."""

    position: np.ndarray
    orientation: Quat

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", p)
        if abs(self.orientation.norm() - 1.0) > 1e-6:
            object.__setattr__(self, "orientation", self.orientation.normalized())

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), Quat.identity())

    def compose(self, other: "Pose") -> "Pose":
        """T^A_C = T^A_B.compose(T^B_C)."""
        return Pose(
            self.position + self.orientation.rotate(other.position),
            (self.orientation * other.orientation).normalized(),
        )

    def inverse(self) -> "Pose":
        qi = self.orientation.inverse()
        return Pose(-qi.rotate(self.position), qi)

    def transform(self, points) -> np.ndarray:
        """Map points from the child frame into the parent frame."""
        return self.orientation.rotate(points) + self.position

    def rotation_matrix(self) -> np.ndarray:
        return self.orientation.to_matrix()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model; pixel coordinates have the origin at the image corner."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    @staticmethod
    def from_fov(width: int, height: int, fov_x_rad: float, fov_y_rad: float) -> "CameraIntrinsics":
        fx = (width / 2.0) / math.tan(fov_x_rad / 2.0)
        fy = (height / 2.0) / math.tan(fov_y_rad / 2.0)
        return CameraIntrinsics(fx, fy, width / 2.0, height / 2.0, width, height)


@dataclass(frozen=True)
class Extrinsics:
    """Camera mount T^B_C: rotation camera->body and lever arm in body."""

    rotation: Quat
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))


def nadir_extrinsics(lever_arm=(0.0, 0.0, 0.0)) -> Extrinsics:
    """Straight-down mount: camera x = body x, camera z = body -z.

    With zero vehicle heading this aligns image u with East and image v
    with map v (southward), so a level image is a scaled map patch.
    """
    return Extrinsics(Quat.from_axis_angle([1.0, 0.0, 0.0], math.pi), np.asarray(lever_arm, dtype=float))


@dataclass(frozen=True)
class MapGeometry:
    """Georeferenced map raster: resolution in meters/pixel and size in pixels."""

    resolution: float
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("map resolution must be positive")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("map size must be positive")

    @property
    def extent_east(self) -> float:
        return self.width_px * self.resolution

    @property
    def extent_north(self) -> float:
        return self.height_px * self.resolution


def yaw_rotation(angle: float) -> np.ndarray:
    """Rotation about Up by `angle` (CCW from East), as a 3x3 matrix."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    return Quat.from_axis_angle(axis, angle).to_matrix()


def matrix_from_euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return yaw_rotation(yaw) @ rotation_about_axis([0, 1, 0], pitch) @ rotation_about_axis([1, 0, 0], roll)


def euler_zyx_from_matrix(m) -> tuple[float, float, float]:
    """Inverse of matrix_from_euler_zyx; returns (yaw, pitch, roll).

    Pitch is clamped into [-pi/2, pi/2]; gimbal lock (|pitch| = pi/2) is not
    expected for the near-level flight profiles simulated here.
    """
    m = np.asarray(m, dtype=float)
    pitch = -math.asin(max(-1.0, min(1.0, m[2, 0])))
    yaw = math.atan2(m[1, 0], m[0, 0])
    roll = math.atan2(m[2, 1], m[2, 2])
    return yaw, pitch, roll


def map_pixel_to_geodetic(pixel, geom: MapGeometry) -> np.ndarray:
    """Ground position of a map pixel in G.

    Parameters
    ----------
    pixel : (2,) or (N, 2) array-like
        Map pixel (u, v); u right, v down from the upper-left corner.
    geom : MapGeometry

    Returns
    -------
    (2,) or (N, 2) ndarray, [East, North] in meters. North is <= 0 over
    the map because v grows southward from the anchor row.
    """
    px = np.asarray(pixel, dtype=float)
    u, v = px[..., 0], px[..., 1]
    if np.any(u < 0) or np.any(u > geom.width_px) or np.any(v < 0) or np.any(v > geom.height_px):
        raise ValueError(f"map pixel {pixel!r} outside raster 0..{geom.width_px} x 0..{geom.height_px}")
    return np.stack([u * geom.resolution, -v * geom.resolution], axis=-1)


def geodetic_to_map_pixel(position, geom: MapGeometry) -> np.ndarray:
    """Inverse of map_pixel_to_geodetic; takes [East, North] (extra axes ignored)."""
    p = np.asarray(position, dtype=float)
    return np.stack([p[..., 0] / geom.resolution, -p[..., 1] / geom.resolution], axis=-1)


def project(points_cam, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points onto the image plane.

    Raises ValueError if any point has optical-axis coordinate z <= 0.
    No image-bounds check: callers decide what "visible" means.
    """
    p = np.asarray(points_cam, dtype=float)
    z = p[..., 2]
    if np.any(z <= 0.0):
        raise ValueError("point behind camera (z <= 0)")
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def back_project(pixels, intr: CameraIntrinsics) -> np.ndarray:
    """Unit-norm viewing ray in the camera frame for each pixel."""
    px = np.asarray(pixels, dtype=float)
    x = (px[..., 0] - intr.cx) / intr.fx
    y = (px[..., 1] - intr.cy) / intr.fy
    rays = np.stack([x, y, np.ones_like(x)], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def warp_image_point(pixel, heading: float, altitude: float, intr: CameraIntrinsics, geom: MapGeometry) -> np.ndarray:
    """Similarity warp of an image pixel into a map-pixel displacement.

    Nadir-view approximation used by the image-registration baseline: a
    pixel offset from the principal point maps to s * R2(heading) * offset
    in map pixels, where s = (altitude / fx) / resolution converts camera
    pixels to map pixels. The returned displacement is relative to the map
    position of the camera's ground point.

    R2 is [[cos t, sin t], [-sin t, cos t]]: both image v and map v point
    down, so rotating by the heading CCW about Up in East/North coordinates
    is a clockwise matrix in pixel axes.
    """
    if altitude <= 0:
        raise ValueError("altitude must be positive")
    px = np.asarray(pixel, dtype=float)
    d = px - np.array([intr.cx, intr.cy])
    s = (altitude / intr.fx) / geom.resolution
    c, sn = math.cos(heading), math.sin(heading)
    rot = np.array([[c, sn], [-sn, c]])
    return s * (d @ rot.T)


def rotate_world_to_geo(points_w, heading: float) -> np.ndarray:
    """Yaw the odometry frame onto geodetic axes: x_G = Rz(heading) x_W.

    `heading` is the compass heading of the keyframe that anchors the
    odometry frame (its yaw in W is zero by construction), so the same
    rotation maps every reconstructed point of the flight.
    """
    return np.asarray(points_w, dtype=float) @ yaw_rotation(heading).T


def body_position_from_camera(camera_pose: Pose, ext: Extrinsics) -> np.ndarray:
    """Vehicle position given the camera pose in G and the mount transform.

    p_B = p_C - R^G_C R^C_B p^B_C  (the camera lever arm, undone in G).
    """
    r_gc = camera_pose.orientation
    return camera_pose.position - (r_gc * ext.rotation.inverse()).rotate(ext.translation)


def camera_pose_from_body(body_pose: Pose, ext: Extrinsics) -> Pose:
    """T^A_C = T^A_B compose T^B_C."""
    return body_pose.compose(Pose(ext.translation, ext.rotation))
