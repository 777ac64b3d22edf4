"""Turntable-capture reconstruction toolkit.

Pose algebra, sparse-model ingestion, point-cloud cleanup and metric
calibration, rigid alignment, and precision/recall evaluation around an
external learned-reconstruction stage.
"""

__version__ = "0.1.0"

from .errors import TurnscanError
from .geometry import (
    PoseConvention,
    RigidTransform,
    UnitQuaternion,
    apply,
    apply_points,
    axis_angle_rotation,
    compose,
    invert,
    quat_to_rotation,
    rotation_to_quat,
)
from .pointcloud import Aabb, PointCloud, SpatialIndex, build_index, read_ply, write_ply

__all__ = [
    "TurnscanError",
    "PoseConvention",
    "RigidTransform",
    "UnitQuaternion",
    "apply",
    "apply_points",
    "axis_angle_rotation",
    "compose",
    "invert",
    "quat_to_rotation",
    "rotation_to_quat",
    "Aabb",
    "PointCloud",
    "SpatialIndex",
    "build_index",
    "read_ply",
    "write_ply",
    "__version__",
]
