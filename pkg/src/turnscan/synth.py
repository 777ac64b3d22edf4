"""Synthetic-data generators.

Turntable scenes with known poses, parametric clouds, perturbed evaluation
pairs, and a full pipeline fixture (object + reference ball + outliers +
camera trajectory) so every stage can be verified without real captures.
All generators are pure functions of their seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .geometry import (
    PoseConvention,
    RigidTransform,
    apply_points,
    axis_angle_rotation,
    compose,
    invert,
    rotation_to_quat,
)
from .pointcloud import PointCloud, write_ply

PathLike = Union[str, Path]


@dataclass(frozen=True)
class TurntableScene:
    """Stationary camera watching an object that rotates in angular_step
    increments about rotation_axis (through the world origin)."""

    n_frames: int
    rotation_axis: np.ndarray
    angular_step: float
    camera_pose_world: RigidTransform  # camera-to-world
    object_points: PointCloud

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError(f"n_frames must be >= 2, got {self.n_frames}")
        ax = np.asarray(self.rotation_axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(ax) - 1.0) > 1e-12:
            raise ValueError("rotation_axis must be unit length")
        ax = np.array(ax, copy=True)
        ax.setflags(write=False)
        object.__setattr__(self, "rotation_axis", ax)
        if self.camera_pose_world.convention is not PoseConvention.CAMERA_TO_WORLD:
            raise ValueError("camera_pose_world must carry the CAMERA_TO_WORLD tag")


@dataclass(frozen=True)
class ShapeSpec:
    """Parametric cloud description; `kind` picks the generator."""

    kind: str  # sphere | box_surface | composite
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    extents: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    sample_count: int = 1000
    noise_sigma: float = 0.0
    seed: int = 0
    children: Tuple["ShapeSpec", ...] = ()

    def __post_init__(self):
        if self.kind not in ("sphere", "box_surface", "composite"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.kind == "composite" and not self.children:
            raise ValueError("composite spec needs children")


def _sphere_points(spec: ShapeSpec, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(spec.sample_count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * spec.radius + np.asarray(spec.center)


def box_surface_grid(
    center, half_extents, points_per_edge: int
) -> np.ndarray:
    """Deterministic grid over the six faces of a box, duplicates merged."""
    c = np.asarray(center, dtype=float)
    h = np.asarray(half_extents, dtype=float)
    n = points_per_edge
    lin = [np.linspace(-h[i], h[i], n) for i in range(3)]
    faces = []
    for ax in range(3):
        u, v = [i for i in range(3) if i != ax]
        uu, vv = np.meshgrid(lin[u], lin[v], indexing="ij")
        for sgn in (-1.0, 1.0):
            pts = np.zeros((n * n, 3))
            pts[:, u] = uu.ravel()
            pts[:, v] = vv.ravel()
            pts[:, ax] = sgn * h[ax]
            faces.append(pts)
    return np.unique(np.concatenate(faces) + c, axis=0)


def _box_points(spec: ShapeSpec) -> np.ndarray:
    n_edge = max(2, int(round(np.sqrt(spec.sample_count / 6.0))))
    return box_surface_grid(spec.center, np.asarray(spec.extents) / 2.0, n_edge)


def fibonacci_sphere(n: int, radius: float, center) -> np.ndarray:
    """Evenly spread points on a sphere (golden-angle spiral)."""
    i = np.arange(n)
    golden = (1.0 + 5.0 ** 0.5) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / n
    theta = 2.0 * np.pi * i / golden
    s = np.sqrt(1.0 - z ** 2)
    pts = np.stack([s * np.cos(theta), s * np.sin(theta), z], axis=1)
    return pts * radius + np.asarray(center, dtype=float)


def sample_shape(spec: ShapeSpec) -> PointCloud:
    """Generate the cloud a spec describes; identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "sphere":
        pts = _sphere_points(spec, rng)
    elif spec.kind == "box_surface":
        pts = _box_points(spec)
    else:
        pts = np.concatenate([sample_shape(ch).positions for ch in spec.children])
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    return PointCloud(pts, source_label=spec.kind)


def rotation_step(scene: TurntableScene, i: int) -> RigidTransform:
    """Object's world rotation at frame i: i angular steps about the axis."""
    return RigidTransform(
        axis_angle_rotation(scene.rotation_axis, i * scene.angular_step),
        np.zeros(3),
    )


def equivalent_camera_trajectory(scene: TurntableScene) -> List[RigidTransform]:
    """Camera-to-world pose per frame for the moving-camera reformulation.

    Frame i's camera orbits the (now fixed) object by the inverse of the
    object's rotation: pose_i = Rot(axis, -i*step) o camera_pose_world.
    """
    poses = []
    for i in range(scene.n_frames):
        rot = RigidTransform(
            axis_angle_rotation(scene.rotation_axis, -i * scene.angular_step),
            np.zeros(3),
        )
        poses.append(compose(rot, scene.camera_pose_world))
    return poses


def observed_in_camera_turntable(scene: TurntableScene, i: int) -> np.ndarray:
    """Frame-i camera-coordinate points under (rotating object, fixed camera)."""
    world = rotation_step(scene, i)
    cam = invert(scene.camera_pose_world)
    return apply_points(cam, apply_points(world, scene.object_points.positions))


def observed_in_camera_orbit(scene: TurntableScene, i: int) -> np.ndarray:
    """Frame-i camera-coordinate points under (fixed object, orbiting camera)."""
    cam_i = invert(equivalent_camera_trajectory(scene)[i])
    return apply_points(cam_i, scene.object_points.positions)


def make_eval_pair(
    base: PointCloud,
    perturbation: RigidTransform,
    dropout_fraction: float = 0.0,
    seed: int = 0,
) -> Tuple[PointCloud, PointCloud]:
    """(psc, pgt) test pair: pgt is the base cloud, psc a perturbed copy with
    a seeded random subset removed."""
    if not 0 <= dropout_fraction < 1:
        raise ValueError(f"dropout_fraction must be in [0,1), got {dropout_fraction}")
    rng = np.random.default_rng(seed)
    moved = apply_points(perturbation, base.positions)
    keep = rng.random(len(base)) >= dropout_fraction
    psc = PointCloud(
        moved[keep],
        None if base.colors is None else base.colors[keep],
        "synthetic-reconstruction",
    )
    return psc, PointCloud(base.positions, base.colors, "synthetic-ground-truth")


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose with +z toward target, +y downward (cv axes)."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=float))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("view direction parallel to up vector")
    right /= nr
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=1)
    return RigidTransform(R, eye, convention=PoseConvention.CAMERA_TO_WORLD)


def write_text_model(
    dir_path: PathLike,
    poses_c2w: List[RigidTransform],
    width: int = 3840,
    height: int = 2160,
    focal: float = 3000.0,
) -> None:
    """Emit a minimal sparse-model directory in the text layout.

    One PINHOLE camera, one image per pose (named frame_%04d.png), no 2D
    observations, empty 3D point list.
    """
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    cx, cy = width / 2.0, height / 2.0
    (d / "cameras.txt").write_text(
        "# Camera list with one line of data per camera:\n"
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        f"1 PINHOLE {width} {height} {focal!r} {focal!r} {cx!r} {cy!r}\n",
        encoding="ascii",
    )
    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for i, pose in enumerate(poses_c2w, start=1):
        cw = invert(pose)
        q = rotation_to_quat(cw.rotation)
        vals = [float(q.w), float(q.x), float(q.y), float(q.z)] + [
            float(v) for v in cw.translation
        ]
        lines.append(
            f"{i} " + " ".join(repr(v) for v in vals) + f" 1 frame_{i:04d}.png"
        )
        lines.append("")  # no 2D observations
    (d / "images.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    (d / "points3D.txt").write_text(
        "# 3D point list with one line of data per point\n", encoding="ascii"
    )


# ---------------------------------------------------------------------------
# Full pipeline fixture
#
# A normalized "export" of a box-shaped object plus a reference ball, with
# off-surface debris inside the working volume and far background clutter,
# alongside the metric ground truth and a consistent camera trajectory.
# Parameter choices keep every stage's decision margins wide: outlier
# separations are ~5x the filter threshold, and the rigid perturbation stays
# under half the point-grid spacing so alignment correspondences are exact.
# ---------------------------------------------------------------------------

FIXTURE_SCALE_TRUE = 0.4  # meters per scene unit
FIXTURE_OBJECT_SCALE_M = 0.2  # box edge length, meters
FIXTURE_BALL_RADIUS_M = 0.04
_BALL_CENTER_M = np.array([0.22, 0.0, 0.04])
_BOX_CENTER_M = (0.0, 0.0, 0.10)
_BOX_EDGE_POINTS = 24
_BALL_POINTS = 800
_N_SCATTER = 120
_N_BACKGROUND = 200


def make_pipeline_fixture(out_dir: PathLike, seed: int = 7) -> dict:
    """Write gt.ply, sc_raw.ply, scene.json, and sparse/ under out_dir.

    Returns the scene metadata dict (also stored as scene.json): true scale,
    ROI boxes in scene units, point counts, and the evaluation threshold.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    box = box_surface_grid(_BOX_CENTER_M, (0.1, 0.1, 0.1), _BOX_EDGE_POINTS)
    ball = fibonacci_sphere(_BALL_POINTS, FIXTURE_BALL_RADIUS_M, _BALL_CENTER_M)
    gt_pts = np.concatenate([box, ball])
    gt = PointCloud(gt_pts, source_label="ground-truth")

    base_scene = gt_pts / FIXTURE_SCALE_TRUE
    centroid = base_scene.mean(axis=0)
    ball_center_scene = _BALL_CENTER_M / FIXTURE_SCALE_TRUE

    # Small rigid offset between the export and the ground truth.
    ang = np.deg2rad(0.15)
    axis = np.array([0.3, 1.0, 0.2])
    axis /= np.linalg.norm(axis)
    Rg = axis_angle_rotation(axis, ang)
    tg = np.array([0.0015, -0.001, 0.001])
    sc_obj = (base_scene - centroid) @ Rg.T + centroid + tg

    # Debris: well off every surface, spread out, clear of the ball region.
    from scipy.spatial import cKDTree  # local import keeps module load light

    obj_tree = cKDTree(base_scene)
    scatter: List[np.ndarray] = []
    while len(scatter) < _N_SCATTER:
        p = rng.uniform(-0.95, 0.95, size=3) + centroid
        if obj_tree.query(p)[0] < 0.25:
            continue
        if np.abs(p - ball_center_scene).max() < 0.35:
            continue
        if scatter and cKDTree(np.array(scatter)).query(p)[0] < 0.15:
            continue
        scatter.append(p)

    background = rng.uniform(2.0, 4.0, size=(_N_BACKGROUND, 3)) * rng.choice(
        [-1.0, 1.0], size=(_N_BACKGROUND, 3)
    )
    sc_raw = PointCloud(
        np.concatenate([sc_obj, np.array(scatter), background]),
        source_label="raw-export",
    )

    scene = TurntableScene(
        n_frames=36,
        rotation_axis=np.array([0.0, 0.0, 1.0]),
        angular_step=2.0 * np.pi / 36.0,
        camera_pose_world=look_at_pose((1.5, 0.0, 0.75), centroid),
        object_points=PointCloud(base_scene),
    )
    write_text_model(out / "sparse", equivalent_camera_trajectory(scene))

    write_ply(gt, out / "gt.ply")
    write_ply(sc_raw, out / "sc_raw.ply")

    meta = {
        "scale_true": FIXTURE_SCALE_TRUE,
        "object_scale_m": FIXTURE_OBJECT_SCALE_M,
        "eval_epsilon_m": 0.005 * FIXTURE_OBJECT_SCALE_M,
        "reference_radius_m": FIXTURE_BALL_RADIUS_M,
        "roi_scene": {
            "min": [float(v) for v in centroid - 1.0],
            "max": [float(v) for v in centroid + 1.0],
        },
        "ball_roi_scene": {
            "min": [float(v) for v in ball_center_scene - 0.15],
            "max": [float(v) for v in ball_center_scene + 0.15],
        },
        "counts": {
            "object": int(len(gt)),
            "scatter": _N_SCATTER,
            "background": _N_BACKGROUND,
        },
        "files": {
            "ground_truth": "gt.ply",
            "raw_export": "sc_raw.ply",
            "sparse_model": "sparse",
        },
        "seed": seed,
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta
