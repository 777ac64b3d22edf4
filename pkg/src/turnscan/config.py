"""Pipeline configuration: TOML file with per-stage tables, overridable by
command-line flags (flags win).

Only keys listed in DEFAULTS are accepted; unknown keys are an error so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib

from .errors import TurnscanError

PathLike = Union[str, Path]


class ConfigError(TurnscanError):
    """Config file missing, unparseable, or holding unknown/invalid keys."""


DEFAULTS: Dict[str, Dict[str, Any]] = {
    "paths": {
        "video": "",
        "workdir": ".",
        "colmap_binary": "colmap",
        "ffmpeg_binary": "ffmpeg",
        "exported_cloud": "",
        "ground_truth": "",
    },
    "fps": {
        "candidates": [5, 4, 3, 2, 1],
    },
    "sor": {
        "k_neighbors": 20,
        "std_ratio": 2.0,
    },
    "roi": {
        "min": [],
        "max": [],
    },
    "ball_roi": {
        "min": [],
        "max": [],
    },
    "calibration": {
        "reference_radius_m": 0.04,
        "iterations": 500,
        "inlier_tol": 1e-3,
    },
    "icp": {
        "max_iterations": 50,
        "max_correspondence_dist": 0.05,
        "convergence_delta_rmse": 1e-7,
        "subsample_to": 0,  # 0 = use every source point
    },
    "sweep": {
        "eps_min": 0.0,
        "eps_max": 0.02,
        "steps": 21,
        "spacing": "linear",
        "f_target": 0.999,
    },
    "run": {
        "mapper_threads": 64,
        "axis_convention": "cv",
        "seed": 0,
        "use_gpu": False,
    },
}


@dataclass
class PipelineConfig:
    """Merged configuration; `tables` mirrors the TOML section structure."""

    tables: Dict[str, Dict[str, Any]] = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def get(self, section: str, key: str):
        return self.tables[section][key]

    def set(self, section: str, key: str, value) -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        self.tables[section][key] = value

    def echo(self) -> Dict[str, Dict[str, Any]]:
        """Deep copy for embedding in run summaries."""
        return copy.deepcopy(self.tables)


def load_config(path: Optional[PathLike] = None) -> PipelineConfig:
    """Defaults, overlaid with the TOML file's tables when one is given."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    for section, table in doc.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{p}: unknown config section [{section}]")
        if not isinstance(table, dict):
            raise ConfigError(f"{p}: [{section}] must be a table")
        for key, value in table.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{p}: unknown config key [{section}] {key}")
            expected = DEFAULTS[section][key]
            if isinstance(expected, bool):
                ok = isinstance(value, bool)
            elif isinstance(expected, (int, float)):
                ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            elif isinstance(expected, list):
                ok = isinstance(value, list)
            else:
                ok = isinstance(value, str)
            if not ok:
                raise ConfigError(
                    f"{p}: [{section}] {key} has wrong type "
                    f"(expected {type(expected).__name__})"
                )
            cfg.tables[section][key] = value
    return cfg
