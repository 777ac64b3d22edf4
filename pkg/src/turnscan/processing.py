"""Post-export cleanup and metric calibration.

ROI cropping, statistical outlier removal, reference-ball sphere fitting, and
uniform rescaling of a normalized reconstruction to metric units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import TurnscanError
from .pointcloud import Aabb, PointCloud, SpatialIndex

DEFAULT_REFERENCE_RADIUS_M = 0.04


class CloudTooSmall(TurnscanError):
    """Not enough points for the requested neighborhood statistics."""


class DegenerateGeometry(TurnscanError):
    """Sampled points never span a unique fit (e.g. all coplanar)."""


class NoConvergence(TurnscanError):
    """RANSAC consensus stayed below the acceptance floor."""


class NonPositiveRadius(TurnscanError):
    """Sphere radius must be strictly positive for calibration."""


class NonPositiveScale(TurnscanError):
    """Scale factor must be strictly positive and finite."""


@dataclass(frozen=True)
class SorParams:
    """Statistical-outlier-removal knobs; defaults follow common practice."""

    k_neighbors: int = 20
    std_ratio: float = 2.0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not self.std_ratio > 0:
            raise ValueError(f"std_ratio must be > 0, got {self.std_ratio}")


@dataclass(frozen=True)
class SphereFit:
    """Fitted reference-ball geometry in scene units."""

    center: np.ndarray
    radius: float
    inlier_count: int
    rms_residual: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class ScaleCalibration:
    """Meters-per-scene-unit factor derived from the reference ball."""

    scale_factor: float
    reference_radius_m: float = DEFAULT_REFERENCE_RADIUS_M

    def __post_init__(self):
        if not (np.isfinite(self.scale_factor) and self.scale_factor > 0):
            raise ValueError(f"scale_factor must be positive finite, got {self.scale_factor}")


def crop_roi(cloud: PointCloud, box: Aabb) -> PointCloud:
    """Keep exactly the points inside the closed box, order preserved."""
    mask = box.contains(cloud.positions)
    return cloud.take(np.nonzero(mask)[0])


def sor_filter(
    cloud: PointCloud, params: SorParams = SorParams()
) -> Tuple[PointCloud, np.ndarray]:
    """Remove statistical outliers by mean k-NN distance.

    For each point, d_i = mean distance to its k nearest neighbors (the point
    itself excluded). Points with d_i > mean({d}) + std_ratio * std({d}) are
    removed (population std). Returns (filtered cloud, removed indices
    ascending).
    """
    n = len(cloud)
    k = params.k_neighbors
    if n <= k:
        raise CloudTooSmall(f"need more than k_neighbors={k} points, have {n}")
    index = SpatialIndex(cloud)
    # Query k+1 and drop each point's own slot. The self-match may land
    # anywhere inside a tie run, so locate it by index instead of assuming
    # slot 0.
    idx, dist = index.knn_batch(cloud.positions, k + 1)
    self_pos = np.argmax(idx == np.arange(n)[:, None], axis=1)
    cols = np.arange(k)[None, :]
    pick = np.where(cols >= self_pos[:, None], cols + 1, cols)
    neigh = np.take_along_axis(dist, pick, axis=1)
    d = neigh.mean(axis=1)
    mu = d.mean()
    sigma = d.std()
    removed = np.nonzero(d > mu + params.std_ratio * sigma)[0]
    kept = np.nonzero(d <= mu + params.std_ratio * sigma)[0]
    return cloud.take(kept), removed


def _sphere_through(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Unique sphere through 4 points, or raise ValueError if coplanar.

    Subtracting the first point's equation from the rest linearizes
    ||p - c||^2 = r^2 into 2 (p_i - p_0) . c = ||p_i||^2 - ||p_0||^2.
    """
    p0 = points[0]
    A = 2.0 * (points[1:] - p0)
    b = (points[1:] ** 2).sum(axis=1) - (p0 ** 2).sum()
    det = np.linalg.det(A)
    if abs(det) < 1e-12:
        raise ValueError("coplanar sample")
    center = np.linalg.solve(A, b)
    radius = float(np.linalg.norm(p0 - center))
    return center, radius


def _sphere_lstsq(points: np.ndarray) -> Tuple[np.ndarray, float]:
    """Algebraic least-squares sphere: minimize sum over points of
    (||p||^2 - 2 p.c - k)^2 with r^2 = k + ||c||^2."""
    A = np.concatenate([2.0 * points, np.ones((len(points), 1))], axis=1)
    b = (points ** 2).sum(axis=1)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    center = sol[:3]
    r2 = sol[3] + (center ** 2).sum()
    if r2 <= 0:
        raise ValueError("degenerate least-squares sphere")
    return center, float(np.sqrt(r2))


def fit_sphere_ransac(
    cloud: PointCloud,
    iterations: int = 200,
    inlier_tol: float = 1e-3,
    seed: int = 0,
) -> SphereFit:
    """RANSAC sphere fit with a final least-squares refinement on inliers.

    Candidate spheres come from random non-coplanar 4-point samples; best
    candidate by inlier count (ties broken by lower rms residual). Raises
    DegenerateGeometry if every sample is coplanar and NoConvergence when the
    best consensus is under 10% of the cloud.
    """
    pts = cloud.positions
    n = len(pts)
    if n < 4:
        raise DegenerateGeometry(f"need >= 4 points to fit a sphere, have {n}")
    if not inlier_tol > 0:
        raise ValueError(f"inlier_tol must be > 0, got {inlier_tol}")
    rng = np.random.default_rng(seed)

    best = None  # (inlier_count, rms, center, radius, inlier_mask)
    any_valid = False
    for _ in range(iterations):
        sample = rng.choice(n, size=4, replace=False)
        try:
            center, radius = _sphere_through(pts[sample])
        except ValueError:
            continue
        any_valid = True
        resid = np.abs(np.linalg.norm(pts - center, axis=1) - radius)
        mask = resid <= inlier_tol
        count = int(mask.sum())
        if count == 0:
            continue
        rms = float(np.sqrt((resid[mask] ** 2).mean()))
        if best is None or count > best[0] or (count == best[0] and rms < best[1]):
            best = (count, rms, center, radius, mask)

    if not any_valid:
        raise DegenerateGeometry("all RANSAC samples were coplanar")
    if best is None or best[0] < max(4, 0.1 * n):
        got = 0 if best is None else best[0]
        raise NoConvergence(f"best consensus {got}/{n} below 10% floor")

    inliers = pts[best[4]]
    try:
        center, radius = _sphere_lstsq(inliers)
    except ValueError:
        center, radius = best[2], best[3]
    resid = np.abs(np.linalg.norm(inliers - center, axis=1) - radius)
    rms = float(np.sqrt((resid ** 2).mean()))
    return SphereFit(center=center, radius=radius, inlier_count=best[0], rms_residual=rms)


def calibrate_scale(
    fit: SphereFit, reference_radius_m: float = DEFAULT_REFERENCE_RADIUS_M
) -> ScaleCalibration:
    """Meters-per-scene-unit factor from a fitted reference ball."""
    if not (np.isfinite(fit.radius) and fit.radius > 0):
        raise NonPositiveRadius(f"fitted radius {fit.radius} is not positive")
    if not (np.isfinite(reference_radius_m) and reference_radius_m > 0):
        raise NonPositiveRadius(f"reference radius {reference_radius_m} is not positive")
    return ScaleCalibration(
        scale_factor=reference_radius_m / fit.radius,
        reference_radius_m=reference_radius_m,
    )


def apply_scale(cloud: PointCloud, s: float) -> PointCloud:
    """Uniformly scale every coordinate about the origin; colors unchanged."""
    if not (np.isfinite(s) and s > 0):
        raise NonPositiveScale(f"scale must be positive finite, got {s}")
    return PointCloud(cloud.positions * s, cloud.colors, cloud.source_label)
