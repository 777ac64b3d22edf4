"""Point-cloud container, PLY 1.0 read/write, and an exact nearest-neighbor index.

On-disk coordinates are float32 (the common PLY exporter default); in-memory
math runs in float64 so millimeter-scale threshold decisions sit well above
storage noise after rescaling.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import TurnscanError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Relative slack used to decide when a nearest-neighbor candidate set may be
# missing an exact tie; candidates within this band are re-checked exactly.
_TIE_REL = 1e-9
_TIE_ABS = 1e-300


class UnsupportedFormat(TurnscanError):
    """PLY feature outside the supported subset (e.g. big-endian, missing xyz)."""


class MalformedHeader(TurnscanError):
    """PLY header does not follow the documented layout."""


class TruncatedBody(TurnscanError):
    """PLY body ended before the vertex count promised by the header."""


class EmptyCloud(TurnscanError):
    """Operation requires at least one point."""


class KTooLarge(TurnscanError):
    """k-nearest-neighbor query with k outside [1, N]."""


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points with optional per-point uint8 RGB colors.

    positions are float64 (N, 3); coordinates must be finite. Immutable after
    construction.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    source_label: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain NaN or Inf")
        pos = np.array(pos, copy=True)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors, dtype=np.uint8)
            if col.shape != (len(pos), 3):
                raise ValueError(
                    f"colors must be ({len(pos)}, 3) uint8, got {col.shape}"
                )
            col = np.array(col, copy=True)
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def take(self, indices: np.ndarray, source_label: Optional[str] = None) -> "PointCloud":
        """Subset by index array, keeping colors aligned and order as given."""
        return PointCloud(
            self.positions[indices],
            None if self.colors is None else self.colors[indices],
            self.source_label if source_label is None else source_label,
        )


@dataclass(frozen=True)
class Aabb:
    """Closed axis-aligned box; units follow the cloud it is applied to."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=float).reshape(3)
        hi = np.asarray(self.max, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed box."""
        pts = np.asarray(points, dtype=float)
        return np.all((pts >= self.min) & (pts <= self.max), axis=1)


# ---------------------------------------------------------------------------
# PLY 1.0 I/O
#
# Supported layout: "ply" magic, format ascii/binary_little_endian 1.0,
# element vertex with float x, y, z and optional uchar red, green, blue.
# Unknown vertex properties are skipped with a warning; elements after the
# vertex element are ignored.
# ---------------------------------------------------------------------------

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    properties: List[Tuple[str, str]] = field(default_factory=list)  # (type, name)
    has_list: bool = False


def _parse_ply_header(fh) -> Tuple[str, List[_PlyElement]]:
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic line")
    fmt = None
    elements: List[_PlyElement] = []
    while True:
        raw = fh.readline()
        if not raw:
            raise MalformedHeader("header ended before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if len(parts) != 3 or parts[2] != "1.0":
                raise MalformedHeader(f"unrecognized format line: {line!r}")
            if parts[1] == "ascii":
                fmt = "ascii"
            elif parts[1] == "binary_little_endian":
                fmt = "binary_le"
            elif parts[1] == "binary_big_endian":
                raise UnsupportedFormat("big-endian PLY files are not supported")
            else:
                raise MalformedHeader(f"unknown format {parts[1]!r}")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            try:
                count = int(parts[2])
            except ValueError as exc:
                raise MalformedHeader(f"bad element count in {line!r}") from exc
            if count < 0:
                raise MalformedHeader(f"negative element count in {line!r}")
            elements.append(_PlyElement(parts[1], count))
        elif parts[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise MalformedHeader(f"bad list property line: {line!r}")
                elements[-1].has_list = True
                elements[-1].properties.append(("list", parts[4]))
            else:
                if len(parts) != 3:
                    raise MalformedHeader(f"bad property line: {line!r}")
                if parts[1] not in _PLY_SCALARS:
                    raise MalformedHeader(f"unknown property type {parts[1]!r}")
                elements[-1].properties.append((parts[1], parts[2]))
        else:
            raise MalformedHeader(f"unrecognized header line: {line!r}")
    if fmt is None:
        raise MalformedHeader("header has no format line")
    return fmt, elements


def read_ply(path: PathLike, source_label: Optional[str] = None) -> PointCloud:
    """Read a PLY 1.0 point cloud (ascii or binary little-endian).

    Requires a vertex element with x, y, z; optional uchar red/green/blue is
    read as colors. float32 coordinates survive bit-exactly (widened to
    float64 in memory).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        vertex = None
        for el in elements:
            if el.name == "vertex":
                vertex = el
                break
            # Skip a leading non-vertex element if its size is computable.
            if el.has_list:
                raise UnsupportedFormat(
                    f"element {el.name!r} with list properties precedes vertex data"
                )
            if fmt == "ascii":
                for _ in range(el.count):
                    if not fh.readline():
                        raise TruncatedBody(f"file ended inside element {el.name!r}")
            else:
                stride = sum(np.dtype(_PLY_SCALARS[t]).itemsize for t, _ in el.properties)
                skipped = fh.read(stride * el.count)
                if len(skipped) != stride * el.count:
                    raise TruncatedBody(f"file ended inside element {el.name!r}")
        if vertex is None:
            raise UnsupportedFormat("no vertex element found")

        names = [n for _, n in vertex.properties]
        for req in ("x", "y", "z"):
            if req not in names:
                raise UnsupportedFormat(f"vertex element lacks property {req!r}")
        has_color = all(c in names for c in ("red", "green", "blue"))
        extra = [n for n in names if n not in ("x", "y", "z", "red", "green", "blue")]
        if extra:
            logger.warning("skipping unknown vertex properties: %s", ", ".join(extra))

        if fmt == "ascii":
            rows = []
            for i in range(vertex.count):
                line = fh.readline()
                if not line:
                    raise TruncatedBody(
                        f"header promised {vertex.count} vertices, body ended at {i}"
                    )
                fields = line.split()
                if len(fields) < len(names):
                    raise TruncatedBody(f"vertex line {i} has too few values")
                rows.append(fields)
            cols = {n: idx for idx, (_, n) in enumerate(vertex.properties)}
            try:
                pos = np.array(
                    [[float(r[cols["x"]]), float(r[cols["y"]]), float(r[cols["z"]])] for r in rows],
                    dtype=np.float64,
                ).reshape(vertex.count, 3)
                colors = None
                if has_color:
                    colors = np.array(
                        [
                            [int(r[cols["red"]]), int(r[cols["green"]]), int(r[cols["blue"]])]
                            for r in rows
                        ],
                        dtype=np.uint8,
                    ).reshape(vertex.count, 3)
            except ValueError as exc:
                raise TruncatedBody(f"non-numeric vertex value: {exc}") from exc
        else:
            dtype = np.dtype([(n, "<" + _PLY_SCALARS[t]) for t, n in vertex.properties])
            raw = fh.read(dtype.itemsize * vertex.count)
            if len(raw) != dtype.itemsize * vertex.count:
                raise TruncatedBody(
                    f"header promised {vertex.count} vertices "
                    f"({dtype.itemsize * vertex.count} bytes), got {len(raw)} bytes"
                )
            rec = np.frombuffer(raw, dtype=dtype)
            pos = np.stack(
                [rec["x"].astype(np.float64), rec["y"].astype(np.float64), rec["z"].astype(np.float64)],
                axis=1,
            ).reshape(vertex.count, 3)
            colors = None
            if has_color:
                colors = np.stack(
                    [rec["red"], rec["green"], rec["blue"]], axis=1
                ).astype(np.uint8).reshape(vertex.count, 3)

    if not np.all(np.isfinite(pos)):
        raise TruncatedBody("vertex data contains NaN or Inf coordinates")
    return PointCloud(pos, colors, source_label if source_label is not None else path.name)


def write_ply(cloud: PointCloud, path: PathLike, format: str = "binary_le") -> None:
    """Write a cloud as PLY 1.0 (`binary_le` or `ascii`); deterministic bytes."""
    if format not in ("binary_le", "ascii"):
        raise ValueError(f"format must be 'binary_le' or 'ascii', got {format!r}")
    n = len(cloud)
    has_color = cloud.colors is not None
    header = ["ply"]
    header.append("format ascii 1.0" if format == "ascii" else "format binary_little_endian 1.0")
    header.append(f"element vertex {n}")
    header += ["property float x", "property float y", "property float z"]
    if has_color:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    pos32 = cloud.positions.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if format == "ascii":
            for i in range(n):
                x, y, z = pos32[i]
                line = f"{x:.9g} {y:.9g} {z:.9g}"
                if has_color:
                    r, g, b = cloud.colors[i]
                    line += f" {r} {g} {b}"
                fh.write((line + "\n").encode("ascii"))
        else:
            if has_color:
                dtype = np.dtype(
                    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                     ("red", "u1"), ("green", "u1"), ("blue", "u1")]
                )
                rec = np.empty(n, dtype=dtype)
                rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
                rec["red"], rec["green"], rec["blue"] = (
                    cloud.colors[:, 0], cloud.colors[:, 1], cloud.colors[:, 2]
                )
            else:
                dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
                rec = np.empty(n, dtype=dtype)
                rec["x"], rec["y"], rec["z"] = pos32[:, 0], pos32[:, 1], pos32[:, 2]
            fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# Spatial index
# ---------------------------------------------------------------------------


class SpatialIndex:
    """Exact nearest-neighbor index over a cloud's positions.

    Queries return exactly what a brute-force linear scan would, including
    tie-breaking by lowest point index. The kd-tree supplies candidates;
    distances are re-derived from the stored coordinates so they match a
    direct numpy computation bit for bit, and any candidate band that could
    hide an exact tie is re-checked against the full ball.

    Immutable after construction; concurrent queries are safe.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        self._pts = cloud.positions  # already read-only float64
        self._n = len(cloud)
        self._tree = cKDTree(self._pts)

    def __len__(self) -> int:
        return self._n

    def _exact(self, q: np.ndarray, idx: np.ndarray) -> np.ndarray:
        diff = self._pts[idx] - q
        return np.sqrt((diff * diff).sum(axis=-1))

    def nearest(self, q) -> Tuple[int, float]:
        """Exact nearest neighbor of a single query point."""
        idx, dist = self.nearest_batch(np.asarray(q, dtype=float).reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def nearest_batch(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Exact nearest neighbors for an (M, 3) query array.

        Returns (indices, distances); ties resolve to the lowest index.
        """
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != 3:
            raise ValueError(f"queries must be (M, 3), got {Q.shape}")
        m = Q.shape[0]
        if m == 0:
            return np.empty(0, dtype=np.intp), np.empty(0)
        kq = min(self._n, 4)
        ds, di = self._tree.query(Q, k=kq)
        ds = ds.reshape(m, kq)
        di = di.reshape(m, kq)

        de = self._exact(Q[:, None, :], di)
        dmin = de.min(axis=1)
        # Candidate band complete? If the farthest kd candidate sits within the
        # tie tolerance of the minimum, exact ties may lie beyond it.
        if kq < self._n:
            suspect = ds[:, -1] <= dmin * (1.0 + _TIE_REL) + _TIE_ABS
        else:
            suspect = np.zeros(m, dtype=bool)

        best = np.where(de == dmin[:, None], di, self._n)
        out_idx = best.min(axis=1)
        out_dist = dmin

        for row in np.nonzero(suspect)[0]:
            r = dmin[row] * (1.0 + _TIE_REL) + _TIE_ABS
            cand = np.asarray(self._tree.query_ball_point(Q[row], r), dtype=np.intp)
            dc = self._exact(Q[row], cand)
            lo = dc.min()
            winners = cand[dc == lo]
            out_idx[row] = winners.min()
            out_dist[row] = lo
        return out_idx.astype(np.intp), out_dist

    def k_nearest(self, q, k: int) -> List[Tuple[int, float]]:
        """Exact k nearest neighbors, ascending distance, ties by lowest index."""
        if not 1 <= k <= self._n:
            raise KTooLarge(f"k={k} outside [1, {self._n}]")
        idx, dist = self.knn_batch(np.asarray(q, dtype=float).reshape(1, 3), k)
        return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]

    def knn_batch(self, queries: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Exact k-NN for an (M, 3) query array -> ((M, k) indices, (M, k) distances).

        Each row is sorted by (distance, index), matching a brute-force
        partial sort with lowest-index tie-breaking.
        """
        if not 1 <= k <= self._n:
            raise KTooLarge(f"k={k} outside [1, {self._n}]")
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != 3:
            raise ValueError(f"queries must be (M, 3), got {Q.shape}")
        m = Q.shape[0]
        kq = min(self._n, k + 4)
        ds, di = self._tree.query(Q, k=kq)
        ds = ds.reshape(m, kq)
        di = di.reshape(m, kq)
        de = self._exact(Q[:, None, :], di)

        # Row-wise sort by (distance, index): order columns by index first,
        # then stable-sort by exact distance.
        by_idx = np.argsort(di, axis=1, kind="stable")
        rows = np.arange(m)[:, None]
        di_s = di[rows, by_idx]
        de_s = de[rows, by_idx]
        by_dist = np.argsort(de_s, axis=1, kind="stable")
        di_s = di_s[rows, by_dist]
        de_s = de_s[rows, by_dist]

        out_i = di_s[:, :k].copy()
        out_d = de_s[:, :k].copy()

        if kq < self._n:
            boundary = de_s[:, k - 1]
            suspect = np.nonzero(ds[:, -1] <= boundary * (1.0 + _TIE_REL) + _TIE_ABS)[0]
        else:
            suspect = ()
        for row in suspect:
            r = de_s[row, k - 1] * (1.0 + _TIE_REL) + _TIE_ABS
            cand = np.asarray(self._tree.query_ball_point(Q[row], r), dtype=np.intp)
            if cand.size < k:  # tolerance band fell short; fall back to all points
                cand = np.arange(self._n, dtype=np.intp)
            dc = self._exact(Q[row], cand)
            order = np.lexsort((cand, dc))[:k]
            out_i[row] = cand[order]
            out_d[row] = dc[order]
        return out_i.astype(np.intp), out_d


def build_index(cloud: PointCloud) -> SpatialIndex:
    """Build the exact nearest-neighbor index for a non-empty cloud."""
    return SpatialIndex(cloud)


def nearest(index: SpatialIndex, q) -> Tuple[int, float]:
    """Exact nearest neighbor (point_index, distance) of a query point."""
    return index.nearest(q)


def k_nearest(index: SpatialIndex, q, k: int) -> List[Tuple[int, float]]:
    """Exact k nearest neighbors as (point_index, distance), ascending."""
    return index.k_nearest(q, k)
