"""Minimum-frame-rate selection.

Try candidate frame rates from high to low; keep the rate that registers
every extracted frame with the fewest frames overall. The probe that runs
extraction + SfM is injected so the control flow is testable without video.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

from .errors import TurnscanError

PathLike = Union[str, Path]


class ProbeFailure(TurnscanError):
    """A registration probe raised; carries the failing fps."""

    def __init__(self, fps: float, cause: BaseException):
        super().__init__(f"probe failed at fps={fps:g}: {cause}")
        self.fps = fps
        self.cause = cause


@dataclass(frozen=True)
class FpsTrial:
    """One candidate frame rate's extraction/registration outcome."""

    fps: float
    n_frames: int
    n_registered: int

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if self.n_frames < 0 or self.n_registered < 0:
            raise ValueError("frame counts must be >= 0")
        if self.n_registered > self.n_frames:
            raise ValueError(
                f"registered {self.n_registered} exceeds extracted {self.n_frames}"
            )

    @property
    def complete(self) -> bool:
        """Every extracted frame received a pose (and there was at least one)."""
        return self.n_frames > 0 and self.n_registered == self.n_frames


# (video_path, fps) -> FpsTrial
RegistrationProbe = Callable[[str, float], FpsTrial]


@dataclass(frozen=True)
class FpsSelection:
    """Winner plus the full trial log (operators need the evidence)."""

    selected_fps: Optional[float]
    trials: List[FpsTrial]


def default_fps_candidates() -> List[int]:
    """Top-down candidate rates, starting at 5 frames/second."""
    return [5, 4, 3, 2, 1]


def select_optimal_fps(
    video_path: PathLike,
    fps_list: Sequence[float],
    probe: RegistrationProbe,
) -> FpsSelection:
    """Pick the fully-registered candidate with the fewest extracted frames.

    Candidates are probed in list order; a strictly-smaller frame count is
    required to displace the current best, so the earliest candidate wins
    ties. Returns selected_fps=None when no candidate registers completely.
    """
    fps_list = list(fps_list)
    if not fps_list:
        raise ValueError("fps_list must be non-empty")
    if any(f <= 0 for f in fps_list):
        raise ValueError(f"all fps candidates must be positive, got {fps_list}")
    if len(set(fps_list)) != len(fps_list):
        raise ValueError(f"fps candidates must be distinct, got {fps_list}")

    fps_opt: Optional[float] = None
    min_frames = math.inf
    trials: List[FpsTrial] = []
    for fps in fps_list:
        try:
            trial = probe(str(video_path), fps)
        except TurnscanError as exc:
            raise ProbeFailure(fps, exc) from exc
        trials.append(trial)
        if trial.complete and trial.n_frames < min_frames:
            fps_opt = fps
            min_frames = trial.n_frames
    return FpsSelection(selected_fps=fps_opt, trials=trials)


def write_run_report(selection: FpsSelection, video_path: PathLike, path: PathLike) -> None:
    """Emit the trial log as JSON: {"video", "trials": [...], "selected_fps"}."""
    doc = {
        "video": str(video_path),
        "trials": [
            {
                "fps": t.fps,
                "n_frames": t.n_frames,
                "n_registered": t.n_registered,
                "complete": t.complete,
            }
            for t in selection.trials
        ],
        "selected_fps": selection.selected_fps,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="ascii")
