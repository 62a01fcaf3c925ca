"""Scan conditioning: self-return crop, voxel downsampling, surface covariances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud


@dataclass
class PreprocessParams:
    self_crop_half_extent: float = 0.5
    voxel_leaf: float = 0.25
    covariance_knn: int = 10
    plane_epsilon: float = 1e-3


def crop_self_returns(cloud: PointCloud, half_extent: float) -> PointCloud:
    """Drop points inside the axis-aligned cube of half side ``half_extent`` at the origin."""
    if half_extent <= 0.0:
        raise ValueError("half_extent must be positive")
    inside = np.all(np.abs(cloud.points) <= half_extent, axis=1)
    return cloud.subset(~inside)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Centroid per occupied voxel of an origin-anchored grid.

    Output order is ascending lexicographic voxel index, so the result is
    deterministic and independent of the input point order. Per-point
    covariances and labels do not survive aggregation and are dropped.
    """
    if leaf <= 0.0:
        raise ValueError("leaf must be positive")
    if len(cloud) == 0:
        return PointCloud(np.empty((0, 3)))
    idx = np.floor(cloud.points / leaf).astype(np.int64)
    uniq, inverse = np.unique(idx, axis=0, return_inverse=True)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, cloud.points)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(float)
    return PointCloud(sums / counts[:, None])


def estimate_point_covariances(cloud: PointCloud, k: int = 10,
                               plane_epsilon: float = 1e-3) -> PointCloud:
    """Attach plane-regularized covariances from each point's k nearest neighbors.

    The sample covariance of the k-neighborhood (self inclusive) is
    eigendecomposed and its eigenvalues replaced by (plane_epsilon, 1, 1) in
    ascending order, which keeps surface orientation while flattening scale.
    """
    n = len(cloud)
    if n < k:
        raise ValueError("insufficient points for covariance estimation")
    tree = cKDTree(cloud.points)
    _, nn = tree.query(cloud.points, k=k)
    if k == 1:
        nn = nn[:, None]
    neigh = cloud.points[nn]
    centered = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / float(k)
    _, vecs = np.linalg.eigh(cov)
    vals = np.array([plane_epsilon, 1.0, 1.0])
    regularized = np.einsum("nij,j,nkj->nik", vecs, vals, vecs)
    return cloud.with_covariances(regularized)
