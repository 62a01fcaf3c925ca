"""Posture consistency from detection boxes: ground fitting and pose correction.

Detected objects are assumed to stand on a common flat ground, so box centers
dropped by half their height give ground samples. A plane fit over a sliding
window of boxes constrains roll/pitch; a small mean box-height change between
scans indicates flat terrain and constrains t_z toward the previous pose.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import (DetectionBox, Pose, euler_zyx, from_euler_zyx,
                       rotation_aligning, transform_box, wrap_angle)


@dataclass
class ConstraintParams:
    window_scans: int = 10
    min_inliers: int = 8
    plane_inlier_distance: float = 0.2
    z_change_threshold: float = 0.1
    blend_weight: float = 0.5


@dataclass
class GroundFit:
    normal: np.ndarray
    offset: float
    inlier_count: int


def ground_points_from_boxes(boxes: Sequence[DetectionBox]) -> np.ndarray:
    """Box centers dropped by h/2 along -z: the objects' footprints."""
    if not boxes:
        return np.empty((0, 3))
    centers = np.stack([b.center for b in boxes])
    heights = np.array([b.dims[2] for b in boxes])
    pts = centers.copy()
    pts[:, 2] -= heights / 2.0
    return pts


def _fit_plane(points: np.ndarray):
    centroid = points.mean(axis=0)
    centered = points - centroid
    scatter = centered.T @ centered
    _, vecs = np.linalg.eigh(scatter)
    normal = vecs[:, 0]
    if normal[2] < 0.0:
        normal = -normal
    return normal, centroid


def fit_ground_from_boxes(boxes: Sequence[DetectionBox],
                          params: ConstraintParams | None = None
                          ) -> Optional[GroundFit]:
    """Least-squares ground plane from box footprints; None when under-supported.

    Fits once, keeps points within the inlier distance, refits once on the
    inliers; returns None if the final inlier count is below ``min_inliers``.
    """
    params = params if params is not None else ConstraintParams()
    pts = ground_points_from_boxes(boxes)
    if pts.shape[0] < 3 or pts.shape[0] < params.min_inliers:
        return None
    normal, centroid = _fit_plane(pts)
    dist = np.abs((pts - centroid) @ normal)
    inliers = pts[dist <= params.plane_inlier_distance]
    if inliers.shape[0] < 3:
        return None
    normal, centroid = _fit_plane(inliers)
    dist = np.abs((pts - centroid) @ normal)
    count = int(np.sum(dist <= params.plane_inlier_distance))
    if count < params.min_inliers:
        return None
    return GroundFit(normal=normal, offset=float(normal @ centroid),
                     inlier_count=count)


def apply_consistency_constraint(pose: Pose, prev_pose: Pose,
                                 ground: Optional[GroundFit],
                                 mean_box_dz: Optional[float],
                                 params: ConstraintParams | None = None) -> Pose:
    """Blend roll/pitch toward a level ground normal and t_z toward the previous pose.

    Yaw and t_x/t_y are never modified. With no ground fit and no small
    box-height change the input pose is returned unchanged.
    """
    params = params if params is not None else ConstraintParams()
    w = params.blend_weight
    rotation = pose.rotation
    translation = pose.translation
    changed = False
    if ground is not None:
        world_normal = rotation @ ground.normal
        align = rotation_aligning(world_normal, np.array([0.0, 0.0, 1.0]))
        constrained = align @ rotation
        yaw_e, pitch_e, roll_e = euler_zyx(rotation)
        _, pitch_c, roll_c = euler_zyx(constrained)
        pitch_new = pitch_e + w * wrap_angle(pitch_c - pitch_e)
        roll_new = roll_e + w * wrap_angle(roll_c - roll_e)
        rotation = from_euler_zyx(yaw_e, pitch_new, roll_new)
        changed = True
    if mean_box_dz is not None and abs(mean_box_dz) < params.z_change_threshold:
        translation = translation.copy()
        translation[2] = w * prev_pose.translation[2] + (1.0 - w) * translation[2]
        changed = True
    if not changed:
        return pose
    return Pose(rotation, translation)


class SlidingBoxWindow:
    """Detection boxes of the last N scans, re-expressed in the current body frame."""

    def __init__(self, window_scans: int):
        self._frames: deque = deque(maxlen=window_scans)

    def advance(self, prev_to_current: Pose) -> None:
        """Carry stored boxes from the previous body frame into the current one."""
        self._frames = deque(
            ([transform_box(prev_to_current, b) for b in frame]
             for frame in self._frames),
            maxlen=self._frames.maxlen)

    def push(self, boxes: Sequence[DetectionBox]) -> None:
        self._frames.append(list(boxes))

    def boxes(self) -> List[DetectionBox]:
        out: List[DetectionBox] = []
        for frame in self._frames:
            out.extend(frame)
        return out
