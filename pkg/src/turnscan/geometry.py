"""SE(3) rigid-transform algebra: quaternions, rotations, composition, inversion.

Pose convention vocabulary: a world-to-camera transform maps world coordinates
into the camera frame (the form COLMAP stores), a camera-to-world transform is
its inverse (the form NeRF-style pipelines consume).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import TurnscanError

ORTHONORMALITY_TOL = 1e-9
QUAT_NORM_TOL = 1e-6


class NonUnitQuaternion(TurnscanError):
    """Quaternion norm deviates from 1 by more than the ingestion tolerance."""


class FrameMismatch(TurnscanError):
    """Two tagged poses were composed in an order whose frames do not chain."""


class PoseConvention(enum.Enum):
    WORLD_TO_CAMERA = "world_to_camera"
    CAMERA_TO_WORLD = "camera_to_world"

    def flipped(self) -> "PoseConvention":
        if self is PoseConvention.WORLD_TO_CAMERA:
            return PoseConvention.CAMERA_TO_WORLD
        return PoseConvention.WORLD_TO_CAMERA


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion, scalar-first (w, x, y, z) as in COLMAP image records.

    Construction normalizes the components; norms off by more than
    ``QUAT_NORM_TOL`` are rejected as corrupt data rather than silently fixed.
    """

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))
        if not np.isfinite(n) or abs(n - 1.0) > QUAT_NORM_TOL:
            raise NonUnitQuaternion(
                f"quaternion norm {n!r} deviates from 1 by more than {QUAT_NORM_TOL}"
            )
        for field in ("w", "x", "y", "z"):
            object.__setattr__(self, field, float(getattr(self, field)) / n)

    def negated(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.w, -self.x, -self.y, -self.z)


QuaternionLike = Union[UnitQuaternion, Sequence[float], np.ndarray]


def quat_to_rotation(q: QuaternionLike) -> np.ndarray:
    """Convert a scalar-first unit quaternion to a 3x3 rotation matrix.

    Accepts a UnitQuaternion or any (w, x, y, z) sequence; sequences are
    validated/normalized on the way in. q and -q map to the identical matrix.
    """
    if not isinstance(q, UnitQuaternion):
        vals = np.asarray(q, dtype=float).reshape(-1)
        if vals.shape != (4,):
            raise NonUnitQuaternion(f"expected 4 components (w, x, y, z), got {vals.shape}")
        q = UnitQuaternion(*vals)
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R: np.ndarray) -> UnitQuaternion:
    """Convert a rotation matrix to a scalar-first unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0:
        s = 0.5 / np.sqrt(trace + 1.0)
        w = 0.25 / s
        x = (R[2, 1] - R[1, 2]) * s
        y = (R[0, 2] - R[2, 0]) * s
        z = (R[1, 0] - R[0, 1]) * s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return UnitQuaternion(w, x, y, z)


def axis_angle_rotation(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation about `axis` (need not be unit length) by `angle` radians."""
    a = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("rotation axis must be a nonzero finite vector")
    a = a / n
    c, s = np.cos(angle), np.sin(angle)
    cross = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return c * np.eye(3) + s * cross + (1 - c) * np.outer(a, a)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) pose: 3x3 rotation, 3-vector translation, optional frame tag.

    The 4x4 homogeneous view is available via ``.matrix``. Values are
    immutable after construction and safe to share between threads.
    """

    rotation: np.ndarray
    translation: np.ndarray
    convention: Optional[PoseConvention] = None

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rotation/translation must be finite")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3e})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation determinant {det!r} is not +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls, convention: Optional[PoseConvention] = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), convention)

    @classmethod
    def from_matrix(
        cls, M: np.ndarray, convention: Optional[PoseConvention] = None
    ) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got {M.shape}")
        if np.abs(M[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > ORTHONORMALITY_TOL:
            raise ValueError(f"bottom homogeneous row must be [0 0 0 1], got {M[3]}")
        return cls(M[:3, :3], M[:3, 3], convention)

    @property
    def matrix(self) -> np.ndarray:
        M = np.zeros((4, 4))
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        M[3, 3] = 1.0
        return M


def invert(T: RigidTransform) -> RigidTransform:
    """Invert a rigid transform via the block formula (R^T, -R^T t).

    A WORLD_TO_CAMERA pose inverts to CAMERA_TO_WORLD and vice versa.
    """
    Rt = T.rotation.T
    conv = T.convention.flipped() if T.convention is not None else None
    return RigidTransform(Rt, -(Rt @ T.translation), conv)


def compose(A: RigidTransform, B: RigidTransform) -> RigidTransform:
    """Return the transform applying B first, then A (matrix product A @ B).

    Frame tags must chain: composing two poses with the *same* tag (e.g.
    world-to-camera after world-to-camera) raises FrameMismatch, since the
    inner output frame cannot feed the outer input frame. Untagged transforms
    are treated as frame-preserving adjustments and keep the partner's tag.
    """
    if A.convention is not None and B.convention is not None:
        if A.convention is B.convention:
            raise FrameMismatch(
                f"cannot chain {B.convention.value} into {A.convention.value}"
            )
        conv = None  # round trip lands back in the starting frame
    elif A.convention is None:
        conv = B.convention
    else:
        conv = A.convention
    return RigidTransform(
        A.rotation @ B.rotation,
        A.rotation @ B.translation + A.translation,
        conv,
    )


def apply(T: RigidTransform, p: Sequence[float]) -> np.ndarray:
    """Map a single 3D point: R @ p + t."""
    p = np.asarray(p, dtype=float).reshape(3)
    return T.rotation @ p + T.translation


def apply_points(T: RigidTransform, points: np.ndarray) -> np.ndarray:
    """Map an (N, 3) array of points by the transform."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got {pts.shape}")
    return pts @ T.rotation.T + T.translation
