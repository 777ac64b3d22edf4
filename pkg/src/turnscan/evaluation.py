"""Reconstruction quality metrics: precision/recall at a distance threshold,
F-score, threshold sweeps, and plot-ready CSV output.

Precision(eps) is the fraction of reconstructed points within eps of the
ground truth; Recall(eps) swaps the roles. Both thresholds are inclusive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import IoError
from .pointcloud import EmptyCloud, PointCloud, SpatialIndex

PathLike = Union[str, Path]

DEFAULT_F_TARGET = 0.999


@dataclass(frozen=True)
class SweepSpec:
    """Threshold grid: [eps_min, eps_max] in meters, linear or log spacing."""

    eps_min: float
    eps_max: float
    steps: int = 21
    spacing: str = "linear"

    def __post_init__(self):
        if not 0 <= self.eps_min < self.eps_max:
            raise ValueError(f"need 0 <= eps_min < eps_max, got [{self.eps_min}, {self.eps_max}]")
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")
        if self.spacing not in ("linear", "log"):
            raise ValueError(f"spacing must be 'linear' or 'log', got {self.spacing!r}")
        if self.spacing == "log" and self.eps_min <= 0:
            raise ValueError("log spacing requires eps_min > 0")

    def grid(self) -> np.ndarray:
        if self.spacing == "linear":
            return np.linspace(self.eps_min, self.eps_max, self.steps)
        return np.geomspace(self.eps_min, self.eps_max, self.steps)


@dataclass(frozen=True)
class EvalCurve:
    """Precision/recall/F-score sampled on an ascending threshold grid."""

    thresholds: Tuple[float, ...]
    precision: Tuple[float, ...]
    recall: Tuple[float, ...]
    fscore: Tuple[float, ...]
    optimal_epsilon: float
    optimal_rule: str

    def __post_init__(self):
        n = len(self.thresholds)
        if n < 1 or not (len(self.precision) == len(self.recall) == len(self.fscore) == n):
            raise ValueError("curve lists must be parallel and non-empty")


def _nn_distances(points: np.ndarray, index: SpatialIndex) -> np.ndarray:
    _, dist = index.nearest_batch(points)
    return dist


def precision_at(psc: PointCloud, pgt_index: SpatialIndex, eps: float) -> float:
    """Fraction of reconstructed points whose nearest ground-truth point is
    within eps (inclusive)."""
    if len(psc) == 0:
        raise EmptyCloud("precision needs a non-empty reconstructed cloud")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    d = _nn_distances(psc.positions, pgt_index)
    return float((d <= eps).sum() / len(psc))


def recall_at(pgt: PointCloud, psc_index: SpatialIndex, eps: float) -> float:
    """Fraction of ground-truth points with a reconstructed point within eps.

    Literally precision with the cloud roles swapped.
    """
    return precision_at(pgt, psc_index, eps)


def fscore(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 when both vanish."""
    if p + r == 0:
        return 0.0
    return 2.0 * p * r / (p + r)


def display_score(value: float) -> str:
    """Score as percent with two decimals (1.0 -> '100.00')."""
    return f"{value * 100.0:.2f}"


def sweep(
    psc: PointCloud,
    pgt: PointCloud,
    spec: SweepSpec,
    f_target: float = DEFAULT_F_TARGET,
) -> EvalCurve:
    """Evaluate precision/recall/F over a threshold grid.

    Nearest-neighbor distances are computed once per direction and thresholded
    against every grid value. optimal_epsilon is the smallest grid threshold
    whose F-score reaches f_target; if none does, it is the argmax of F and
    optimal_rule records that.
    """
    if len(psc) == 0 or len(pgt) == 0:
        raise EmptyCloud("sweep needs two non-empty clouds")
    d_sc = _nn_distances(psc.positions, SpatialIndex(pgt))
    d_gt = _nn_distances(pgt.positions, SpatialIndex(psc))
    grid = spec.grid()
    prec = (d_sc[None, :] <= grid[:, None]).sum(axis=1) / len(psc)
    rec = (d_gt[None, :] <= grid[:, None]).sum(axis=1) / len(pgt)
    fs = np.array([fscore(p, r) for p, r in zip(prec, rec)])

    hit = np.nonzero(fs >= f_target)[0]
    if hit.size:
        opt = float(grid[hit[0]])
        rule = f"smallest epsilon with fscore >= {f_target:g}"
    else:
        opt = float(grid[int(np.argmax(fs))])
        rule = f"no epsilon reached fscore {f_target:g}; argmax fscore"
    return EvalCurve(
        thresholds=tuple(float(x) for x in grid),
        precision=tuple(float(x) for x in prec),
        recall=tuple(float(x) for x in rec),
        fscore=tuple(float(x) for x in fs),
        optimal_epsilon=opt,
        optimal_rule=rule,
    )


def write_curve_csv(curve: EvalCurve, path: PathLike) -> None:
    """Write the curve as CSV with a trailing optimal-threshold comment.

    Floats use 17 significant digits so values roundtrip exactly.
    """
    lines = ["epsilon,precision,recall,fscore"]
    for e, p, r, f in zip(curve.thresholds, curve.precision, curve.recall, curve.fscore):
        lines.append(f"{e:.17g},{p:.17g},{r:.17g},{f:.17g}")
    lines.append(f"# optimal_epsilon={curve.optimal_epsilon:.17g} rule={curve.optimal_rule}")
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write curve CSV to {path}: {exc}") from exc


def read_curve_csv(path: PathLike) -> EvalCurve:
    """Parse a curve CSV written by write_curve_csv."""
    text = Path(path).read_text(encoding="ascii")
    rows = []
    opt = None
    rule = ""
    for i, line in enumerate(text.splitlines()):
        if i == 0:
            if line != "epsilon,precision,recall,fscore":
                raise IoError(f"unexpected CSV header: {line!r}")
            continue
        if line.startswith("#"):
            body = line.lstrip("# ").strip()
            if body.startswith("optimal_epsilon="):
                head, _, rule = body.partition(" rule=")
                opt = float(head.split("=", 1)[1])
            continue
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise IoError(f"bad CSV row: {line!r}")
        rows.append(tuple(float(x) for x in parts))
    if not rows or opt is None:
        raise IoError("CSV missing data rows or optimal-threshold comment")
    t, p, r, f = (tuple(col) for col in zip(*rows))
    return EvalCurve(t, p, r, f, opt, rule)
