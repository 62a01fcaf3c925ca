"""SE(3) poses, oriented boxes, and point-cloud containers shared by every stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

# Rotation drift beyond this triggers re-orthonormalization on compose.
_ORTHO_TOL = 1e-9


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.pi - (np.pi - np.asarray(theta, dtype=float)) % (2.0 * np.pi)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(roll: float) -> np.ndarray:
    c, s = math.cos(roll), math.sin(roll)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(pitch: float) -> np.ndarray:
    c, s = math.cos(pitch), math.sin(pitch)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues rotation for an axis-angle vector."""
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-12:
        return np.eye(3) + K + 0.5 * (K @ K)
    Kn = K / angle
    return np.eye(3) + math.sin(angle) * Kn + (1.0 - math.cos(angle)) * (Kn @ Kn)


def se3_exp(xi) -> "Pose":
    """Exponential of a twist [v, omega]; used for right-multiplied pose increments."""
    xi = np.asarray(xi, dtype=float)
    v, omega = xi[:3], xi[3:]
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-12:
        V = np.eye(3) + 0.5 * K + (K @ K) / 6.0
    else:
        V = (np.eye(3)
             + (1.0 - math.cos(angle)) / angle**2 * K
             + (angle - math.sin(angle)) / angle**3 * (K @ K))
    return Pose(so3_exp(omega), V @ v)


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix."""
    c = (float(np.trace(np.asarray(R))) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def orthonormalize(R) -> np.ndarray:
    """Project a near-rotation onto SO(3) (closest rotation in Frobenius norm)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3)
    if np.linalg.det(U @ Vt) < 0.0:
        D[2, 2] = -1.0
    return U @ D @ Vt


def euler_zyx(R):
    """Decompose R = Rz(yaw) @ Ry(pitch) @ Rx(roll); returns (yaw, pitch, roll)."""
    R = np.asarray(R)
    sp = max(-1.0, min(1.0, -float(R[2, 0])))
    pitch = math.asin(sp)
    if abs(sp) < 1.0 - 1e-12:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:  # gimbal lock: fold roll into yaw
        yaw = math.atan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return yaw, pitch, roll


def from_euler_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def rotation_aligning(a, b) -> np.ndarray:
    """Minimal rotation taking unit direction a onto unit direction b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    c = float(a @ b)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        # antiparallel: rotate pi about any axis orthogonal to a
        pick = np.eye(3)[int(np.argmin(np.abs(a)))]
        ortho = np.cross(a, pick)
        ortho /= np.linalg.norm(ortho)
        return so3_exp(math.pi * ortho)
    return so3_exp(axis / s * math.atan2(s, c))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: x_out = rotation @ x_in + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(yaw: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(rot_z(yaw), translation)

    @staticmethod
    def from_euler(yaw: float, pitch: float, roll: float,
                   translation=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(from_euler_zyx(yaw, pitch, roll), translation)

    def compose(self, other: "Pose") -> "Pose":
        R = self.rotation @ other.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            R = orthonormalize(R)
        return Pose(R, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -(Rt @ self.translation))

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def euler(self):
        return euler_zyx(self.rotation)

    def yaw(self) -> float:
        return self.euler()[0]


@dataclass
class PointCloud:
    """3D points with optional per-point covariances and dynamic labels.

    ``labels`` is a boolean array where True marks a return on a moving object.
    """

    points: np.ndarray
    covariances: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = self.points.shape[0]
        if self.covariances is not None:
            self.covariances = np.asarray(self.covariances, dtype=float).reshape(-1, 3, 3)
            if self.covariances.shape[0] != n:
                raise ValueError("covariances length does not match points")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool).reshape(-1)
            if self.labels.shape[0] != n:
                raise ValueError("labels length does not match points")

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, index) -> "PointCloud":
        return PointCloud(
            self.points[index],
            None if self.covariances is None else self.covariances[index],
            None if self.labels is None else self.labels[index],
        )

    def transformed(self, pose: Pose) -> "PointCloud":
        covs = None
        if self.covariances is not None:
            R = pose.rotation
            covs = np.einsum("ij,njk,lk->nil", R, self.covariances, R)
        labels = None if self.labels is None else self.labels.copy()
        return PointCloud(pose.apply(self.points), covs, labels)

    def with_covariances(self, covariances: np.ndarray) -> "PointCloud":
        return PointCloud(self.points.copy(), covariances,
                          None if self.labels is None else self.labels.copy())


@dataclass(frozen=True)
class DetectionBox:
    """Oriented 3D box: center, yaw about +z measured from +x, dims (l, w, h)."""

    center: np.ndarray
    yaw: float
    dims: np.ndarray
    cls: str = "car"
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "dims", np.asarray(self.dims, dtype=float).reshape(3))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        if np.any(self.dims <= 0.0):
            raise ValueError("box dims must be strictly positive")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("box score must lie in [0, 1]")


def point_in_box(points, box: DetectionBox, margin: float = 0.1):
    """True where a point falls inside the box dilated by ``margin`` per axis."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    local = (pts - box.center) @ rot_z(box.yaw)
    half = box.dims / 2.0 + margin
    inside = np.all(np.abs(local) <= half, axis=1)
    if np.ndim(points) == 1:
        return bool(inside[0])
    return inside


def transform_box(pose: Pose, box: DetectionBox) -> DetectionBox:
    """Re-express a yaw-oriented box under a rigid transform.

    Exact for yaw-only poses; for tilted poses the center is transformed
    exactly and the residual roll/pitch is dropped from the orientation.
    """
    center = pose.apply(box.center)
    yaw = wrap_angle(box.yaw + euler_zyx(pose.rotation)[0])
    return replace(box, center=center, yaw=yaw)
