"""Rigid alignment of a reconstructed cloud to ground truth.

Point-to-point ICP: nearest-neighbor correspondences gated by distance, then
the closed-form SVD solution of the orthogonal Procrustes step, iterated to
an RMSE plateau.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import TurnscanError
from .geometry import RigidTransform, apply_points, compose
from .pointcloud import PointCloud, SpatialIndex


class TooFewCorrespondences(TurnscanError):
    """Fewer than 3 point pairs survived the distance gate."""


class DegenerateCovariance(TurnscanError):
    """Correspondence covariance is rank-deficient (e.g. collinear points)."""


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    max_correspondence_dist: float = 0.05
    convergence_delta_rmse: float = 1e-7
    initial_guess: RigidTransform = field(default_factory=RigidTransform.identity)
    subsample_to: Optional[int] = None  # cap on source points used, None = all
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.max_correspondence_dist > 0:
            raise ValueError("max_correspondence_dist must be > 0")
        if not self.convergence_delta_rmse > 0:
            raise ValueError("convergence_delta_rmse must be > 0")


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform  # maps source coordinates into target coordinates
    final_rmse: float
    iterations_run: int
    converged: bool
    correspondence_count: int
    rmse_history: tuple = ()  # per-iteration RMSE after each update


def best_fit_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form rigid transform minimizing sum ||R s_i + t - d_i||^2.

    Cross-covariance SVD with a reflection guard: the sign of det(V U^T)
    corrects the smallest singular vector so the result is a rotation.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"paired (N, 3) arrays required, got {src.shape} and {dst.shape}")
    if len(src) < 3:
        raise TooFewCorrespondences(f"need >= 3 pairs, have {len(src)}")
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    H = (src - sc).T @ (dst - dc)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= max(S[0], 1.0) * 1e-12:
        raise DegenerateCovariance(
            f"correspondence covariance is rank-deficient (singular values {S})"
        )
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = dc - R @ sc
    return RigidTransform(R, t)


def icp_point_to_point(
    source: PointCloud, target: PointCloud, params: IcpParams = IcpParams()
) -> RegistrationResult:
    """Align source onto target; returns the source-to-target transform.

    Each iteration: transform source by the current estimate, pair each point
    with its nearest target point within max_correspondence_dist, solve the
    closed-form step on those pairs, and compose. Stops when the RMSE change
    over one iteration drops below convergence_delta_rmse or at the
    iteration cap; `converged` records which.
    """
    if len(source) < 3 or len(target) < 3:
        raise TooFewCorrespondences(
            f"both clouds need >= 3 points, have {len(source)} and {len(target)}"
        )
    index = SpatialIndex(target)

    src_pts = source.positions
    if params.subsample_to is not None and len(src_pts) > params.subsample_to:
        rng = np.random.default_rng(params.seed)
        keep = np.sort(rng.choice(len(src_pts), size=params.subsample_to, replace=False))
        src_pts = src_pts[keep]

    current = params.initial_guess
    rmse = np.inf
    n_pairs = 0
    converged = False
    iters = 0
    history = []
    for iters in range(1, params.max_iterations + 1):
        moved = apply_points(current, src_pts)
        nn_idx, nn_dist = index.nearest_batch(moved)
        keep = nn_dist <= params.max_correspondence_dist
        n_pairs = int(keep.sum())
        if n_pairs < 3:
            raise TooFewCorrespondences(
                f"iteration {iters}: {n_pairs} pairs within "
                f"{params.max_correspondence_dist}"
            )
        pre = float(np.sqrt((nn_dist[keep] ** 2).mean()))
        step = best_fit_transform(moved[keep], target.positions[nn_idx[keep]])
        current = compose(step, current)
        # Residual on the same pairing after the update; skipping a second
        # NN query keeps the per-iteration RMSE comparison apples-to-apples.
        moved2 = apply_points(step, moved[keep])
        post = float(
            np.sqrt(((moved2 - target.positions[nn_idx[keep]]) ** 2).sum(axis=1).mean())
        )
        rmse = post
        history.append(post)
        if abs(pre - post) < params.convergence_delta_rmse:
            converged = True
            break

    return RegistrationResult(
        transform=current,
        final_rmse=rmse,
        iterations_run=iters,
        converged=converged,
        correspondence_count=n_pairs,
        rmse_history=tuple(history),
    )


def transform_cloud(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    """Map every point by T; colors ride along."""
    return PointCloud(apply_points(T, cloud.positions), cloud.colors, cloud.source_label)
