"""Dynamic-point removal: delete returns inside boxes of tracks flagged dynamic."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from .geometry import DetectionBox, PointCloud, point_in_box


def dynamic_point_mask(points: np.ndarray, boxes: Sequence[DetectionBox],
                       margin: float = 0.1) -> np.ndarray:
    """True where a point lies inside any of the given boxes (dilated by margin)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    removed = np.zeros(pts.shape[0], dtype=bool)
    for box in boxes:
        # coarse circumscribing-sphere prefilter, exact box test on candidates
        radius = float(np.linalg.norm(box.dims / 2.0 + margin))
        cand = np.flatnonzero(
            np.linalg.norm(pts - box.center, axis=1) <= radius)
        if cand.size == 0:
            continue
        removed[cand[point_in_box(pts[cand], box, margin)]] = True
    return removed


def remove_dynamic_points(cloud: PointCloud, dynamic_boxes: Sequence[DetectionBox],
                          margin: float = 0.1) -> Tuple[PointCloud, np.ndarray]:
    """Split a cloud into survivors and the ascending indices of removed points."""
    removed = dynamic_point_mask(cloud.points, dynamic_boxes, margin)
    removed_indices = np.flatnonzero(removed)
    return cloud.subset(~removed), removed_indices
