"""Sparse-model ingestion: parse text/binary SfM exports, invert the
world-to-camera poses into camera-to-world, and emit a NeRF-ready pose
manifest JSON.

Layouts follow COLMAP's documented model formats (cameras/images/points3D in
.txt or .bin flavors, little-endian binary).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import IoError, TurnscanError
from .fps_select import FpsTrial
from .geometry import PoseConvention, RigidTransform, invert, quat_to_rotation

PathLike = Union[str, Path]

AXIS_CONVENTIONS = ("cv", "gl")


class MissingFile(TurnscanError):
    """Expected model file absent from the model directory."""


class MalformedRecord(TurnscanError):
    """A model record does not follow the documented layout."""


class UnknownCameraModel(TurnscanError):
    """Camera model name or id outside the documented table."""


class TruncatedFile(TurnscanError):
    """Binary model file ended mid-record."""


class MagicMismatch(TurnscanError):
    """File content is implausible as a model file of the expected kind."""


class EmptyModel(TurnscanError):
    """Model has no registered images."""


# COLMAP camera models: id -> (name, parameter count).
CAMERA_MODELS: Dict[int, Tuple[str, int]] = {
    0: ("SIMPLE_PINHOLE", 3),
    1: ("PINHOLE", 4),
    2: ("SIMPLE_RADIAL", 4),
    3: ("RADIAL", 5),
    4: ("OPENCV", 8),
    5: ("OPENCV_FISHEYE", 8),
    6: ("FULL_OPENCV", 12),
    7: ("FOV", 5),
    8: ("SIMPLE_RADIAL_FISHEYE", 4),
    9: ("RADIAL_FISHEYE", 5),
    10: ("THIN_PRISM_FISHEYE", 12),
}
CAMERA_MODEL_IDS: Dict[str, int] = {name: mid for mid, (name, _) in CAMERA_MODELS.items()}


@dataclass(frozen=True)
class CameraIntrinsics:
    camera_id: int
    model_name: str
    width: int
    height: int
    params: Tuple[float, ...]

    def __post_init__(self):
        if self.model_name not in CAMERA_MODEL_IDS:
            raise UnknownCameraModel(f"unknown camera model {self.model_name!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"non-positive image size {self.width}x{self.height}")
        arity = CAMERA_MODELS[CAMERA_MODEL_IDS[self.model_name]][1]
        if len(self.params) != arity:
            raise ValueError(
                f"{self.model_name} takes {arity} params, got {len(self.params)}"
            )
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    pose_cw: RigidTransform  # world-to-camera, straight from the SfM output
    camera_id: int
    file_name: str

    def __post_init__(self):
        if not self.file_name:
            raise ValueError("file_name must be non-empty")
        if self.pose_cw.convention is not PoseConvention.WORLD_TO_CAMERA:
            raise ValueError("pose_cw must carry the WORLD_TO_CAMERA tag")


@dataclass(frozen=True)
class SparseModel:
    cameras: Dict[int, CameraIntrinsics]
    images: Tuple[ImageRecord, ...]
    points3d_count: int = 0
    mean_reprojection_error: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        for im in self.images:
            if im.camera_id not in self.cameras:
                raise MalformedRecord(
                    f"image {im.file_name!r} references unknown camera {im.camera_id}"
                )
        if self.points3d_count < 0:
            raise ValueError("points3d_count must be >= 0")


@dataclass(frozen=True)
class ManifestFrame:
    file_path: str
    transform_matrix: np.ndarray  # 4x4 camera-to-world in the manifest's axis convention
    w: int
    h: int
    camera_model: str
    params: Tuple[float, ...]

    def __post_init__(self):
        M = np.asarray(self.transform_matrix, dtype=np.float64)
        if M.shape != (4, 4):
            raise ValueError(f"transform_matrix must be 4x4, got {M.shape}")
        M = np.array(M, copy=True)
        M.setflags(write=False)
        object.__setattr__(self, "transform_matrix", M)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))


@dataclass(frozen=True)
class PoseManifest:
    axis_convention: str
    frames: Tuple[ManifestFrame, ...]
    source_model: str = ""

    def __post_init__(self):
        if self.axis_convention not in AXIS_CONVENTIONS:
            raise ValueError(
                f"axis_convention must be one of {AXIS_CONVENTIONS}, got {self.axis_convention!r}"
            )
        object.__setattr__(self, "frames", tuple(self.frames))
        names = [f.file_path for f in self.frames]
        if names != sorted(names):
            raise ValueError("manifest frames must be sorted by file_path")


# ---------------------------------------------------------------------------
# Text model parsing
# ---------------------------------------------------------------------------


def _data_lines(path: Path):
    """Yield (line_number, stripped_line) skipping comments and blanks."""
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _require(path: Path) -> Path:
    if not path.is_file():
        raise MissingFile(f"model file not found: {path}")
    return path


def _pose_from_qt(q, t, where: str) -> RigidTransform:
    """(QW QX QY QZ), (TX TY TZ) -> world-to-camera transform."""
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-3:
        raise MalformedRecord(f"{where}: quaternion norm {norm:.6f} far from 1")
    R = quat_to_rotation(q / norm)
    return RigidTransform(R, t, convention=PoseConvention.WORLD_TO_CAMERA)


def _parse_pose_fields(fields: Sequence[str], where: str) -> RigidTransform:
    """QW QX QY QZ TX TY TZ text fields -> world-to-camera transform."""
    vals = [float(x) for x in fields[:7]]
    return _pose_from_qt(vals[:4], vals[4:7], where)


def _parse_cameras_text(path: Path) -> Dict[int, CameraIntrinsics]:
    cameras: Dict[int, CameraIntrinsics] = {}
    for lineno, line in _data_lines(path):
        fields = line.split()
        if len(fields) < 4:
            raise MalformedRecord(f"{path.name}:{lineno}: camera line needs >= 4 fields")
        try:
            cam_id = int(fields[0])
            name = fields[1]
            width = int(fields[2])
            height = int(fields[3])
            params = tuple(float(x) for x in fields[4:])
        except ValueError as exc:
            raise MalformedRecord(f"{path.name}:{lineno}: {exc}") from exc
        if name not in CAMERA_MODEL_IDS:
            raise UnknownCameraModel(f"{path.name}:{lineno}: unknown camera model {name!r}")
        try:
            cameras[cam_id] = CameraIntrinsics(cam_id, name, width, height, params)
        except ValueError as exc:
            raise MalformedRecord(f"{path.name}:{lineno}: {exc}") from exc
    return cameras


def _parse_images_text(path: Path) -> List[ImageRecord]:
    images: List[ImageRecord] = []
    lines = path.read_text(encoding="utf-8").splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) < 10:
            raise MalformedRecord(
                f"{path.name}:{lineno}: image line needs 10 fields, got {len(fields)}"
            )
        try:
            image_id = int(fields[0])
            pose = _parse_pose_fields(fields[1:8], f"{path.name}:{lineno}")
            camera_id = int(fields[8])
        except MalformedRecord:
            raise
        except ValueError as exc:
            raise MalformedRecord(f"{path.name}:{lineno}: {exc}") from exc
        name = " ".join(fields[9:])
        images.append(ImageRecord(image_id, pose, camera_id, name))
        # The following line is the image's 2D observation list (possibly
        # empty); it belongs to this record even when blank, so consume it
        # without the comment/blank filtering above.
        i += 1
    return images


def _parse_points_text(path: Path) -> Tuple[int, Optional[float]]:
    count = 0
    err_sum = 0.0
    for lineno, line in _data_lines(path):
        fields = line.split()
        if len(fields) < 8:
            raise MalformedRecord(f"{path.name}:{lineno}: point line needs >= 8 fields")
        try:
            err_sum += float(fields[7])
        except ValueError as exc:
            raise MalformedRecord(f"{path.name}:{lineno}: {exc}") from exc
        count += 1
    return count, (err_sum / count if count else None)


def parse_model_text(dir_path: PathLike) -> SparseModel:
    """Parse cameras.txt/images.txt (and points3D.txt if present)."""
    d = Path(dir_path)
    cameras = _parse_cameras_text(_require(d / "cameras.txt"))
    images = _parse_images_text(_require(d / "images.txt"))
    pts_path = d / "points3D.txt"
    count, mean_err = _parse_points_text(pts_path) if pts_path.is_file() else (0, None)
    return SparseModel(cameras, tuple(images), count, mean_err)


# ---------------------------------------------------------------------------
# Binary model parsing
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, path: Path):
        self.path = path
        self.buf = path.read_bytes()
        self.off = 0

    def remaining(self) -> int:
        return len(self.buf) - self.off

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.remaining() < size:
            raise TruncatedFile(
                f"{self.path.name}: needed {size} bytes at offset {self.off}, "
                f"{self.remaining()} left"
            )
        out = struct.unpack_from(fmt, self.buf, self.off)
        self.off += size
        return out

    def take_cstring(self, limit: int = 4096) -> str:
        end = self.buf.find(b"\x00", self.off)
        if end < 0:
            raise TruncatedFile(f"{self.path.name}: unterminated string at offset {self.off}")
        if end - self.off > limit:
            raise MalformedRecord(f"{self.path.name}: improbable {end - self.off}-byte string")
        s = self.buf[self.off:end].decode("utf-8", errors="replace")
        self.off = end + 1
        return s


def _check_plausible_count(reader: _Reader, count: int, min_record: int, kind: str) -> None:
    """Reject counts the file cannot possibly hold; such files are not models
    of the expected kind (or are saved in some other layout)."""
    if count * min_record > reader.remaining():
        raise MagicMismatch(
            f"{reader.path.name}: header claims {count} {kind} records "
            f"but only {reader.remaining()} bytes follow"
        )


def _parse_cameras_binary(path: Path) -> Dict[int, CameraIntrinsics]:
    r = _Reader(path)
    (n,) = r.take("<Q")
    _check_plausible_count(r, n, struct.calcsize("<iiQQ"), "camera")
    cameras: Dict[int, CameraIntrinsics] = {}
    for _ in range(n):
        cam_id, model_id, width, height = r.take("<iiQQ")
        if model_id not in CAMERA_MODELS:
            raise UnknownCameraModel(f"{path.name}: unknown camera model id {model_id}")
        name, arity = CAMERA_MODELS[model_id]
        params = r.take(f"<{arity}d")
        try:
            cameras[cam_id] = CameraIntrinsics(cam_id, name, int(width), int(height), params)
        except ValueError as exc:
            raise MalformedRecord(f"{path.name}: camera {cam_id}: {exc}") from exc
    return cameras


def _parse_images_binary(path: Path) -> List[ImageRecord]:
    r = _Reader(path)
    (n,) = r.take("<Q")
    _check_plausible_count(r, n, struct.calcsize("<idddddddi") + 1 + 8, "image")
    images: List[ImageRecord] = []
    for _ in range(n):
        rec = r.take("<idddddddi")
        image_id = rec[0]
        qw, qx, qy, qz, tx, ty, tz = rec[1:8]
        camera_id = rec[8]
        name = r.take_cstring()
        (n_pts,) = r.take("<Q")
        pt_size = struct.calcsize("<ddq")
        if n_pts * pt_size > r.remaining():
            raise TruncatedFile(
                f"{path.name}: image {name!r} claims {n_pts} observations "
                f"but only {r.remaining()} bytes remain"
            )
        r.off += n_pts * pt_size
        pose = _pose_from_qt(
            (qw, qx, qy, qz), (tx, ty, tz), f"{path.name}: image {image_id}"
        )
        images.append(ImageRecord(image_id, pose, camera_id, name))
    return images


def _parse_points_binary(path: Path) -> Tuple[int, Optional[float]]:
    r = _Reader(path)
    (n,) = r.take("<Q")
    _check_plausible_count(r, n, struct.calcsize("<QdddBBBd") + 8, "point")
    err_sum = 0.0
    for _ in range(n):
        rec = r.take("<QdddBBBd")
        err_sum += rec[7]
        (track_len,) = r.take("<Q")
        tr_size = struct.calcsize("<ii")
        if track_len * tr_size > r.remaining():
            raise TruncatedFile(f"{path.name}: track of {track_len} exceeds file")
        r.off += track_len * tr_size
    return n, (err_sum / n if n else None)


def parse_model_binary(dir_path: PathLike) -> SparseModel:
    """Parse cameras.bin/images.bin (and points3D.bin if present)."""
    d = Path(dir_path)
    cameras = _parse_cameras_binary(_require(d / "cameras.bin"))
    images = _parse_images_binary(_require(d / "images.bin"))
    pts_path = d / "points3D.bin"
    count, mean_err = _parse_points_binary(pts_path) if pts_path.is_file() else (0, None)
    return SparseModel(cameras, tuple(images), count, mean_err)


def parse_model(dir_path: PathLike) -> SparseModel:
    """Parse whichever flavor the directory holds (binary preferred)."""
    d = Path(dir_path)
    if (d / "cameras.bin").is_file():
        return parse_model_binary(d)
    if (d / "cameras.txt").is_file():
        return parse_model_text(d)
    raise MissingFile(f"no cameras.bin or cameras.txt under {d}")


# ---------------------------------------------------------------------------
# Pose conversion and manifest I/O
# ---------------------------------------------------------------------------

# Right-multiplying a camera-to-world matrix by this flips the camera's
# y and z axes (the "gl" convention used by several NeRF toolchains).
_GL_FLIP = np.diag([1.0, -1.0, -1.0, 1.0])


def to_camera_to_world(
    model: SparseModel, axis_convention: str = "cv", source_model: str = ""
) -> PoseManifest:
    """Invert every world-to-camera pose; sort frames by file name.

    axis_convention "cv" is the pure inverse; "gl" additionally negates the
    second and third rotation columns of each camera-to-world matrix.
    """
    if axis_convention not in AXIS_CONVENTIONS:
        raise ValueError(
            f"axis_convention must be one of {AXIS_CONVENTIONS}, got {axis_convention!r}"
        )
    if not model.images:
        raise EmptyModel("model has no registered images")
    frames = []
    for im in sorted(model.images, key=lambda r: r.file_name):
        cam = model.cameras[im.camera_id]
        M = invert(im.pose_cw).matrix
        if axis_convention == "gl":
            M = M @ _GL_FLIP
        frames.append(
            ManifestFrame(
                file_path=im.file_name,
                transform_matrix=M,
                w=cam.width,
                h=cam.height,
                camera_model=cam.model_name,
                params=cam.params,
            )
        )
    return PoseManifest(axis_convention, tuple(frames), source_model)


def registration_stats(model: SparseModel, extracted_frame_count: int, fps: float) -> FpsTrial:
    """Registration outcome for one candidate rate: N_reg vs N_frames.

    A model with more registered images than extracted frames is rejected by
    FpsTrial's own validation (the trial would be meaningless).
    """
    if extracted_frame_count < 0:
        raise ValueError(f"extracted_frame_count must be >= 0, got {extracted_frame_count}")
    return FpsTrial(fps=fps, n_frames=extracted_frame_count, n_registered=len(model.images))


def unregistered_frames(model: SparseModel, frame_names: Sequence[str]) -> List[str]:
    """Names of extracted frames the model failed to register, sorted."""
    registered = {im.file_name for im in model.images}
    return sorted(n for n in frame_names if n not in registered)


def _json_g17(obj, indent: int = 0) -> str:
    """JSON with dict keys sorted and floats at 17 significant digits."""
    pad = "  " * indent
    pad_in = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad_in}{json.dumps(k)}: {_json_g17(obj[k], indent + 1)}'
            for k in sorted(obj)
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad_in}{_json_g17(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return f"{obj:.17g}"
    if isinstance(obj, (int, str)):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def write_manifest(manifest: PoseManifest, path: PathLike) -> None:
    """Write the pose manifest JSON; byte-stable for identical input."""
    doc = {
        "axis_convention": manifest.axis_convention,
        "source_model": manifest.source_model,
        "frames": [
            {
                "file_path": f.file_path,
                "transform_matrix": [[float(v) for v in row] for row in f.transform_matrix],
                "w": f.w,
                "h": f.h,
                "camera_model": f.camera_model,
                "params": list(f.params),
            }
            for f in manifest.frames
        ],
    }
    try:
        Path(path).write_text(_json_g17(doc) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write manifest to {path}: {exc}") from exc


def read_manifest(path: PathLike) -> PoseManifest:
    """Parse a pose manifest written by write_manifest."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"manifest not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{p.name}: invalid JSON: {exc}") from exc
    try:
        frames = tuple(
            ManifestFrame(
                file_path=f["file_path"],
                transform_matrix=np.asarray(f["transform_matrix"], dtype=np.float64),
                w=int(f["w"]),
                h=int(f["h"]),
                camera_model=f["camera_model"],
                params=tuple(f["params"]),
            )
            for f in doc["frames"]
        )
        return PoseManifest(doc["axis_convention"], frames, doc.get("source_model", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"{p.name}: {exc}") from exc
