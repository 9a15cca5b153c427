"""Pinhole camera math: depth back-projection, projection, and point-cloud prep."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class DepthImage:
    """Metric depth in meters; pixels with depth <= 0 or non-finite are invalid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"depth map must be 2-d, got shape {self.values.shape}")

    @property
    def validity(self) -> np.ndarray:
        return np.isfinite(self.values) & (self.values > 0)


@dataclass
class PointCloud:
    """Camera-frame metric points, one row per (X, Y, Z)."""

    points: np.ndarray
    source_pixels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)

    def __len__(self):
        return self.points.shape[0]


def back_project(depth: DepthImage, k: CameraIntrinsics) -> PointCloud:
    """Lift every valid depth pixel to a camera-frame 3D point.

    X = (u - cx) / fx * Z and Y = (v - cy) / fy * Z with u, v the integer
    pixel column/row and Z the stored depth.
    """
    h, w = depth.values.shape
    if (w, h) != (k.width, k.height):
        raise ValueError(f"depth extent {w}x{h} mismatches intrinsics {k.width}x{k.height}")
    valid = depth.validity
    vs, us = np.nonzero(valid)
    z = depth.values[vs, us].astype(np.float64)
    x = (us - k.cx) / k.fx * z
    y = (vs - k.cy) / k.fy * z
    pts = np.stack([x, y, z], axis=1)
    return PointCloud(points=pts, source_pixels=np.stack([vs, us], axis=1))


def project(point, k: CameraIntrinsics) -> tuple[float, float]:
    """Inverse of back_project for a single camera-frame point; returns (u, v)."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    if z <= 0:
        raise ValueError(f"cannot project point with Z={z} <= 0")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, np.ndarray, float]:
    """Center on the centroid and scale to unit max radius; returns (cloud, centroid, scale)."""
    if len(cloud) == 0:
        raise ValueError("cannot normalize an empty point cloud")
    pts = cloud.points.astype(np.float64)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale <= 0:
        scale = 1.0
    out = PointCloud(points=centered / scale, source_pixels=cloud.source_pixels)
    return out, centroid.astype(np.float32), scale


def subsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Seeded draw of exactly n points: without replacement when possible, padded otherwise."""
    if n < 1:
        raise ValueError(f"subsample count must be >= 1, got {n}")
    m = len(cloud)
    if m == 0:
        raise ValueError("cannot subsample an empty point cloud")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if m >= n:
        idx = rng.choice(m, size=n, replace=False)
    else:
        idx = np.concatenate([np.arange(m), rng.choice(m, size=n - m, replace=True)])
    src = cloud.source_pixels[idx] if cloud.source_pixels is not None else None
    return PointCloud(points=cloud.points[idx], source_pixels=src)
