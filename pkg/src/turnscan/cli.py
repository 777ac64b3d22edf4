"""Command-line surface for the reconstruction pipeline.

Subcommands cover frame extraction, frame-rate selection, SfM orchestration,
pose conversion, cloud cleanup, metric calibration, alignment, evaluation,
synthetic fixtures, and a composite `pipeline` driver. External programs
(frame extractor, SfM binary) run via subprocess with fully logged argv.

Exit codes: 0 ok; 2 usage; 3 missing input; 4 malformed data; 5 degenerate
or invalid numerics; 6 external tool not found; 7 external tool failed;
8 I/O failure; 9 output exists and --force not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import colmap_ingest, evaluation, fps_select, processing, registration, synth
from .config import ConfigError, PipelineConfig, load_config
from .errors import IoError, TurnscanError
from .pointcloud import Aabb, PointCloud, read_ply, write_ply

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_MALFORMED = 4
EXIT_DEGENERATE = 5
EXIT_TOOL_NOT_FOUND = 6
EXIT_TOOL_FAILURE = 7
EXIT_IO = 8
EXIT_OVERWRITE = 9

STAGES = ("preprocess", "train(external)", "pcd_reconstruction", "evaluation")


class ToolNotFound(TurnscanError):
    """External binary not on PATH (and no explicit path given)."""


class ToolFailure(TurnscanError):
    """External tool exited nonzero; message carries status and stderr tail."""


class NoModelProduced(TurnscanError):
    """SfM finished without producing a parseable sparse model."""


class OverwriteRefused(TurnscanError):
    """Output already exists; pass --force to replace it."""


@dataclass(frozen=True)
class StageTiming:
    stage: str
    wall_seconds: float

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.wall_seconds < 0:
            raise ValueError("wall_seconds must be >= 0")


class RunLog:
    """Collects timings, tool command lines, and outputs for the summary."""

    def __init__(self, command: str, cfg: PipelineConfig):
        self.command = command
        self.cfg = cfg
        self.timings: List[StageTiming] = []
        self.tool_commands: List[List[str]] = []
        self.outputs: Dict = {}

    def time_stage(self, stage: str, t0: float) -> None:
        self.timings.append(StageTiming(stage, time.perf_counter() - t0))

    def summary(self) -> Dict:
        return {
            "command": self.command,
            "config": self.cfg.echo(),
            "timings": [
                {"stage": t.stage, "wall_seconds": t.wall_seconds} for t in self.timings
            ],
            "tool_commands": self.tool_commands,
            "outputs": self.outputs,
        }

    def write(self, path: Path, force: bool) -> None:
        _ensure_clear(path, force)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        logger.info("summary -> %s", path)


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def _ensure_clear(path: Path, force: bool) -> None:
    """Refuse to overwrite existing outputs unless forced."""
    if path.is_file() and not force:
        raise OverwriteRefused(f"{path} exists; pass --force to overwrite")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise OverwriteRefused(f"{path} is non-empty; pass --force to overwrite")


def _vec3(text: str) -> List[float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z — got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _fps_list(text: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _summary_path(args, default_anchor: Path) -> Path:
    if args.summary_out:
        return Path(args.summary_out)
    return default_anchor.with_name(default_anchor.name + ".summary.json")


def _load_cloud(path) -> PointCloud:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"point cloud not found: {p}")
    return read_ply(p)


def _resolve_tool(binary: str) -> str:
    """Expand a tool name via PATH; explicit paths are taken as-is."""
    p = Path(binary)
    if p.is_file():
        return str(p)
    found = shutil.which(binary)
    if found is None:
        raise ToolNotFound(f"external tool {binary!r} not found on PATH")
    return found


def _run_tool(argv: List[str], log: RunLog) -> None:
    log.tool_commands.append(list(argv))
    logger.info("run: %s", " ".join(argv))
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip()[-2000:]
        raise ToolFailure(
            f"{argv[0]} exited with status {proc.returncode}: {tail}"
        )


def _aabb_from_args(min_v, max_v, what: str) -> Aabb:
    if min_v is None or max_v is None:
        raise ValueError(f"{what} requires both --{what}-min and --{what}-max")
    return Aabb(np.asarray(min_v, dtype=float), np.asarray(max_v, dtype=float))


# ---------------------------------------------------------------------------
# External-tool stages
# ---------------------------------------------------------------------------


def extract_frames(
    ffmpeg: str, video: Path, fps: float, outdir: Path, log: RunLog
) -> int:
    """Dump video frames at the requested rate; returns the frame count."""
    if fps <= 0:
        raise ValueError(f"fps must be positive, got {fps}")
    if not video.is_file():
        raise FileNotFoundError(f"video not found: {video}")
    tool = _resolve_tool(ffmpeg)
    outdir.mkdir(parents=True, exist_ok=True)
    pattern = str(outdir / "frame_%04d.png")
    _run_tool(
        [
            tool,
            "-hide_banner",
            "-loglevel", "error",
            "-y",
            "-i", str(video),
            "-vf", f"fps={fps:g}",
            "-start_number", "1",
            pattern,
        ],
        log,
    )
    return len(sorted(outdir.glob("frame_*.png")))


def run_sfm(
    colmap: str,
    image_dir: Path,
    workdir: Path,
    threads: int,
    use_gpu: bool,
    log: RunLog,
) -> colmap_ingest.SparseModel:
    """Feature extraction, sequential matching, mapping; parse the model."""
    if not image_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {image_dir}")
    tool = _resolve_tool(colmap)
    workdir.mkdir(parents=True, exist_ok=True)
    db = workdir / "database.db"
    sparse = workdir / "sparse"
    sparse.mkdir(exist_ok=True)
    gpu = "1" if use_gpu else "0"
    _run_tool(
        [
            tool, "feature_extractor",
            "--database_path", str(db),
            "--image_path", str(image_dir),
            "--SiftExtraction.use_gpu", gpu,
        ],
        log,
    )
    _run_tool(
        [
            tool, "sequential_matcher",
            "--database_path", str(db),
            "--SiftMatching.use_gpu", gpu,
        ],
        log,
    )
    _run_tool(
        [
            tool, "mapper",
            "--database_path", str(db),
            "--image_path", str(image_dir),
            "--output_path", str(sparse),
            "--Mapper.num_threads", str(threads),
        ],
        log,
    )
    for candidate in (sparse / "0", sparse):
        if (candidate / "cameras.bin").is_file() or (candidate / "cameras.txt").is_file():
            model = colmap_ingest.parse_model(candidate)
            if model.images:
                return model
            raise NoModelProduced(f"model under {candidate} registered zero images")
    raise NoModelProduced(f"mapper produced no model under {sparse}")


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_extract_frames(args, cfg: PipelineConfig) -> int:
    log = RunLog("extract-frames", cfg)
    outdir = Path(args.out)
    _ensure_clear(outdir, args.force)
    t0 = time.perf_counter()
    count = extract_frames(
        args.ffmpeg_binary or cfg.get("paths", "ffmpeg_binary"),
        Path(args.video),
        args.fps,
        outdir,
        log,
    )
    log.time_stage("preprocess", t0)
    log.outputs = {"frames_dir": str(outdir), "frame_count": count}
    print(f"extracted {count} frames at {args.fps:g} fps -> {outdir}")
    log.write(_summary_path(args, outdir / "extract"), True)
    return EXIT_OK


def cmd_select_fps(args, cfg: PipelineConfig) -> int:
    log = RunLog("select-fps", cfg)
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    candidates = args.fps_candidates or cfg.get("fps", "candidates")
    ffmpeg = args.ffmpeg_binary or cfg.get("paths", "ffmpeg_binary")
    colmap = args.colmap_binary or cfg.get("paths", "colmap_binary")
    threads = args.threads or cfg.get("run", "mapper_threads")
    use_gpu = cfg.get("run", "use_gpu")

    def probe(video: str, fps: float) -> fps_select.FpsTrial:
        tag = f"{fps:g}".replace(".", "p")
        frames_dir = workdir / f"frames_{tag}fps"
        _ensure_clear(frames_dir, args.force)
        n_frames = extract_frames(ffmpeg, Path(video), fps, frames_dir, log)
        sfm_dir = workdir / f"sfm_{tag}fps"
        _ensure_clear(sfm_dir, args.force)
        try:
            model = run_sfm(colmap, frames_dir, sfm_dir, threads, use_gpu, log)
        except NoModelProduced:
            return fps_select.FpsTrial(fps=fps, n_frames=n_frames, n_registered=0)
        return colmap_ingest.registration_stats(model, n_frames, fps)

    t0 = time.perf_counter()
    selection = fps_select.select_optimal_fps(args.video, candidates, probe)
    log.time_stage("preprocess", t0)

    report = Path(args.report_out) if args.report_out else workdir / "fps_report.json"
    _ensure_clear(report, args.force)
    fps_select.write_run_report(selection, args.video, report)
    log.outputs = {
        "selected_fps": selection.selected_fps,
        "report": str(report),
        "trials": [
            {
                "fps": t.fps,
                "n_frames": t.n_frames,
                "n_registered": t.n_registered,
                "complete": t.complete,
            }
            for t in selection.trials
        ],
    }
    if selection.selected_fps is None:
        print("no candidate frame rate registered every frame")
    else:
        print(f"selected fps: {selection.selected_fps:g}")
    log.write(_summary_path(args, report), True)
    return EXIT_OK


def cmd_run_sfm(args, cfg: PipelineConfig) -> int:
    log = RunLog("run-sfm", cfg)
    t0 = time.perf_counter()
    model = run_sfm(
        args.colmap_binary or cfg.get("paths", "colmap_binary"),
        Path(args.images),
        Path(args.workdir),
        args.threads or cfg.get("run", "mapper_threads"),
        cfg.get("run", "use_gpu"),
        log,
    )
    log.time_stage("preprocess", t0)
    log.outputs = {
        "num_cameras": len(model.cameras),
        "num_images": len(model.images),
        "points3d_count": model.points3d_count,
        "mean_reprojection_error": model.mean_reprojection_error,
        "workdir": str(Path(args.workdir)),
    }
    print(
        f"sparse model: {len(model.images)} images, {len(model.cameras)} cameras, "
        f"{model.points3d_count} points"
    )
    log.write(_summary_path(args, Path(args.workdir) / "sfm"), True)
    return EXIT_OK


def cmd_convert_poses(args, cfg: PipelineConfig) -> int:
    log = RunLog("convert-poses", cfg)
    out = Path(args.out)
    _ensure_clear(out, args.force)
    t0 = time.perf_counter()
    model = colmap_ingest.parse_model(args.model)
    convention = args.axis_convention or cfg.get("run", "axis_convention")
    manifest = colmap_ingest.to_camera_to_world(
        model, convention, source_model=str(args.model)
    )
    colmap_ingest.write_manifest(manifest, out)
    log.time_stage("preprocess", t0)

    sidecar = None
    if args.frames_dir:
        names = sorted(p.name for p in Path(args.frames_dir).glob("frame_*.png"))
        missing = colmap_ingest.unregistered_frames(model, names)
        sidecar = out.with_name(out.stem + ".unregistered.json")
        _ensure_clear(sidecar, args.force)
        sidecar.write_text(json.dumps(missing, indent=2) + "\n")
    log.outputs = {
        "manifest": str(out),
        "n_frames": len(manifest.frames),
        "axis_convention": manifest.axis_convention,
        "unregistered_sidecar": str(sidecar) if sidecar else None,
    }
    print(f"wrote {len(manifest.frames)} poses ({manifest.axis_convention}) -> {out}")
    log.write(_summary_path(args, out), True)
    return EXIT_OK


def cmd_crop(args, cfg: PipelineConfig) -> int:
    log = RunLog("crop", cfg)
    out = Path(args.output)
    _ensure_clear(out, args.force)
    t0 = time.perf_counter()
    cloud = _load_cloud(args.input)
    box = _aabb_from_args(args.box_min, args.box_max, "box")
    kept = processing.crop_roi(cloud, box)
    write_ply(kept, out, format=args.format)
    log.time_stage("pcd_reconstruction", t0)
    log.outputs = {
        "output": str(out),
        "kept": len(kept),
        "removed": len(cloud) - len(kept),
    }
    print(f"crop: kept {len(kept)}/{len(cloud)} points -> {out}")
    log.write(_summary_path(args, out), True)
    return EXIT_OK


def cmd_sor(args, cfg: PipelineConfig) -> int:
    log = RunLog("sor", cfg)
    out = Path(args.output)
    _ensure_clear(out, args.force)
    t0 = time.perf_counter()
    cloud = _load_cloud(args.input)
    params = processing.SorParams(
        k_neighbors=args.k if args.k is not None else cfg.get("sor", "k_neighbors"),
        std_ratio=args.std_ratio if args.std_ratio is not None else cfg.get("sor", "std_ratio"),
    )
    filtered, removed = processing.sor_filter(cloud, params)
    write_ply(filtered, out, format=args.format)
    log.time_stage("pcd_reconstruction", t0)
    removed_path = None
    if args.removed_out:
        removed_path = Path(args.removed_out)
        _ensure_clear(removed_path, args.force)
        removed_path.write_text(json.dumps([int(i) for i in removed]) + "\n")
    log.outputs = {
        "output": str(out),
        "kept": len(filtered),
        "removed": int(removed.size),
        "removed_indices": str(removed_path) if removed_path else None,
        "k_neighbors": params.k_neighbors,
        "std_ratio": params.std_ratio,
    }
    print(f"sor: removed {removed.size} of {len(cloud)} points -> {out}")
    log.write(_summary_path(args, out), True)
    return EXIT_OK


def cmd_calibrate(args, cfg: PipelineConfig) -> int:
    log = RunLog("calibrate", cfg)
    t0 = time.perf_counter()
    cloud = _load_cloud(args.input)
    ball_cloud = cloud
    if args.ball_roi_min is not None or args.ball_roi_max is not None:
        box = _aabb_from_args(args.ball_roi_min, args.ball_roi_max, "ball-roi")
        ball_cloud = processing.crop_roi(cloud, box)
    fit = processing.fit_sphere_ransac(
        ball_cloud,
        iterations=args.iterations or cfg.get("calibration", "iterations"),
        inlier_tol=args.inlier_tol or cfg.get("calibration", "inlier_tol"),
        seed=args.seed if args.seed is not None else cfg.get("run", "seed"),
    )
    reference = args.reference_radius or cfg.get("calibration", "reference_radius_m")
    cal = processing.calibrate_scale(fit, reference)

    out = None
    if args.output:
        out = Path(args.output)
        _ensure_clear(out, args.force)
        write_ply(processing.apply_scale(cloud, cal.scale_factor), out, format=args.format)
    log.time_stage("pcd_reconstruction", t0)

    cal_json = Path(args.calibration_out) if args.calibration_out else (
        (out or Path(args.input)).with_suffix(".calibration.json")
    )
    _ensure_clear(cal_json, args.force)
    cal_doc = {
        "center": [float(v) for v in fit.center],
        "radius": fit.radius,
        "inlier_count": fit.inlier_count,
        "rms_residual": fit.rms_residual,
        "reference_radius_m": cal.reference_radius_m,
        "scale_factor": cal.scale_factor,
    }
    cal_json.write_text(json.dumps(cal_doc, indent=2, sort_keys=True) + "\n")
    log.outputs = dict(cal_doc)
    log.outputs["output"] = str(out) if out else None
    log.outputs["calibration"] = str(cal_json)
    print(
        f"sphere: r={fit.radius:.6g} ({fit.inlier_count} inliers), "
        f"scale={cal.scale_factor:.6g} m/unit"
    )
    log.write(_summary_path(args, cal_json), True)
    return EXIT_OK


def cmd_icp(args, cfg: PipelineConfig) -> int:
    log = RunLog("icp", cfg)
    t0 = time.perf_counter()
    source = _load_cloud(args.source)
    target = _load_cloud(args.target)
    subs = args.subsample_to if args.subsample_to is not None else cfg.get("icp", "subsample_to")
    params = registration.IcpParams(
        max_iterations=args.max_iterations or cfg.get("icp", "max_iterations"),
        max_correspondence_dist=(
            args.max_correspondence_dist
            if args.max_correspondence_dist is not None
            else cfg.get("icp", "max_correspondence_dist")
        ),
        convergence_delta_rmse=(
            args.convergence_delta
            if args.convergence_delta is not None
            else cfg.get("icp", "convergence_delta_rmse")
        ),
        subsample_to=subs if subs else None,
        seed=args.seed if args.seed is not None else cfg.get("run", "seed"),
    )
    result = registration.icp_point_to_point(source, target, params)
    out = None
    if args.output:
        out = Path(args.output)
        _ensure_clear(out, args.force)
        write_ply(
            registration.transform_cloud(source, result.transform), out, format=args.format
        )
    log.time_stage("pcd_reconstruction", t0)

    tf_json = Path(args.transform_out) if args.transform_out else (
        (out or Path(args.source)).with_suffix(".transform.json")
    )
    _ensure_clear(tf_json, args.force)
    tf_doc = {
        "transform_matrix": [[float(v) for v in row] for row in result.transform.matrix],
        "final_rmse": result.final_rmse,
        "iterations_run": result.iterations_run,
        "converged": result.converged,
        "correspondence_count": result.correspondence_count,
        "rmse_history": list(result.rmse_history),
    }
    tf_json.write_text(json.dumps(tf_doc, indent=2, sort_keys=True) + "\n")
    log.outputs = dict(tf_doc)
    log.outputs["output"] = str(out) if out else None
    log.outputs["transform"] = str(tf_json)
    print(
        f"icp: rmse={result.final_rmse:.3e} after {result.iterations_run} iterations "
        f"({'converged' if result.converged else 'iteration cap'})"
    )
    log.write(_summary_path(args, tf_json), True)
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    log = RunLog("eval", cfg)
    out = Path(args.out)
    _ensure_clear(out, args.force)
    t0 = time.perf_counter()
    rec = _load_cloud(args.reconstruction)
    gt = _load_cloud(args.ground_truth)
    spec = evaluation.SweepSpec(
        eps_min=args.eps_min if args.eps_min is not None else cfg.get("sweep", "eps_min"),
        eps_max=args.eps_max if args.eps_max is not None else cfg.get("sweep", "eps_max"),
        steps=args.steps or cfg.get("sweep", "steps"),
        spacing=args.spacing or cfg.get("sweep", "spacing"),
    )
    f_target = args.f_target if args.f_target is not None else cfg.get("sweep", "f_target")
    curve = evaluation.sweep(rec, gt, spec, f_target=f_target)
    evaluation.write_curve_csv(curve, out)
    log.time_stage("evaluation", t0)

    i_opt = curve.thresholds.index(curve.optimal_epsilon)
    log.outputs = {
        "curve": str(out),
        "optimal_epsilon": curve.optimal_epsilon,
        "optimal_rule": curve.optimal_rule,
        "precision_at_optimal": curve.precision[i_opt],
        "recall_at_optimal": curve.recall[i_opt],
        "fscore_at_optimal": curve.fscore[i_opt],
    }
    print(
        f"eval: optimal epsilon {curve.optimal_epsilon:g} m, "
        f"F-score {evaluation.display_score(curve.fscore[i_opt])}"
    )
    log.write(_summary_path(args, out), True)
    return EXIT_OK


def cmd_synth(args, cfg: PipelineConfig) -> int:
    log = RunLog("synth", cfg)
    out = Path(args.out)
    _ensure_clear(out, args.force)
    t0 = time.perf_counter()
    meta = synth.make_pipeline_fixture(
        out, seed=args.seed if args.seed is not None else cfg.get("run", "seed")
    )
    log.time_stage("preprocess", t0)
    log.outputs = {"scene_dir": str(out), "scene": meta}
    print(
        f"synthetic scene -> {out} "
        f"({meta['counts']['object']} object points, scale {meta['scale_true']:g})"
    )
    log.write(_summary_path(args, out / "synth"), True)
    return EXIT_OK


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    """Composite driver: preprocessing when a video is configured, then the
    post-export stages when an exported cloud + ground truth are configured.
    The learned-reconstruction stage between them is external; its handoff is
    the pose manifest."""
    log = RunLog("pipeline", cfg)
    workdir = Path(args.workdir or cfg.get("paths", "workdir"))
    workdir.mkdir(parents=True, exist_ok=True)
    outputs: Dict = {}

    video = args.video or cfg.get("paths", "video")
    if video:
        t0 = time.perf_counter()
        ffmpeg = cfg.get("paths", "ffmpeg_binary")
        colmap = cfg.get("paths", "colmap_binary")
        threads = cfg.get("run", "mapper_threads")
        use_gpu = cfg.get("run", "use_gpu")

        def probe(video_path: str, fps: float) -> fps_select.FpsTrial:
            tag = f"{fps:g}".replace(".", "p")
            frames_dir = workdir / f"frames_{tag}fps"
            _ensure_clear(frames_dir, args.force)
            n = extract_frames(ffmpeg, Path(video_path), fps, frames_dir, log)
            sfm_dir = workdir / f"sfm_{tag}fps"
            _ensure_clear(sfm_dir, args.force)
            try:
                model = run_sfm(colmap, frames_dir, sfm_dir, threads, use_gpu, log)
            except NoModelProduced:
                return fps_select.FpsTrial(fps=fps, n_frames=n, n_registered=0)
            return colmap_ingest.registration_stats(model, n, fps)

        selection = fps_select.select_optimal_fps(
            video, cfg.get("fps", "candidates"), probe
        )
        report = workdir / "fps_report.json"
        _ensure_clear(report, args.force)
        fps_select.write_run_report(selection, video, report)
        outputs["selected_fps"] = selection.selected_fps
        outputs["fps_report"] = str(report)
        if selection.selected_fps is None:
            log.time_stage("preprocess", t0)
            log.outputs = outputs
            print("pipeline: no frame rate achieved full registration; stopping")
            log.write(_summary_path(args, workdir / "pipeline"), True)
            return EXIT_OK

        tag = f"{selection.selected_fps:g}".replace(".", "p")
        model_dir = workdir / f"sfm_{tag}fps" / "sparse"
        model_dir = model_dir / "0" if (model_dir / "0").exists() else model_dir
        model = colmap_ingest.parse_model(model_dir)
        manifest_path = workdir / "transforms.json"
        _ensure_clear(manifest_path, args.force)
        manifest = colmap_ingest.to_camera_to_world(
            model, cfg.get("run", "axis_convention"), source_model=str(model_dir)
        )
        colmap_ingest.write_manifest(manifest, manifest_path)
        outputs["manifest"] = str(manifest_path)
        log.time_stage("preprocess", t0)
        # The learned-reconstruction stage consumes the manifest outside this
        # tool; its wall time belongs to that external run.
        log.timings.append(StageTiming("train(external)", 0.0))
        print(f"pipeline: pose manifest ready -> {manifest_path} (external stage next)")

    exported = args.exported_cloud or cfg.get("paths", "exported_cloud")
    gt_path = args.ground_truth or cfg.get("paths", "ground_truth")
    if exported and gt_path:
        t0 = time.perf_counter()
        cloud = _load_cloud(exported)
        roi_min, roi_max = cfg.get("roi", "min"), cfg.get("roi", "max")
        if roi_min and roi_max:
            cloud = processing.crop_roi(cloud, Aabb(roi_min, roi_max))
            outputs["cropped_points"] = len(cloud)
        filtered, removed = processing.sor_filter(
            cloud,
            processing.SorParams(
                cfg.get("sor", "k_neighbors"), cfg.get("sor", "std_ratio")
            ),
        )
        outputs["sor_removed"] = int(removed.size)

        ball_min, ball_max = cfg.get("ball_roi", "min"), cfg.get("ball_roi", "max")
        ball_cloud = (
            processing.crop_roi(filtered, Aabb(ball_min, ball_max))
            if ball_min and ball_max
            else filtered
        )
        fit = processing.fit_sphere_ransac(
            ball_cloud,
            iterations=cfg.get("calibration", "iterations"),
            inlier_tol=cfg.get("calibration", "inlier_tol"),
            seed=cfg.get("run", "seed"),
        )
        cal = processing.calibrate_scale(fit, cfg.get("calibration", "reference_radius_m"))
        metric = processing.apply_scale(filtered, cal.scale_factor)
        outputs["scale_factor"] = cal.scale_factor

        target = _load_cloud(gt_path)
        subs = cfg.get("icp", "subsample_to")
        result = registration.icp_point_to_point(
            metric,
            target,
            registration.IcpParams(
                max_iterations=cfg.get("icp", "max_iterations"),
                max_correspondence_dist=cfg.get("icp", "max_correspondence_dist"),
                convergence_delta_rmse=cfg.get("icp", "convergence_delta_rmse"),
                subsample_to=subs if subs else None,
                seed=cfg.get("run", "seed"),
            ),
        )
        aligned = registration.transform_cloud(metric, result.transform)
        aligned_path = workdir / "aligned.ply"
        _ensure_clear(aligned_path, args.force)
        write_ply(aligned, aligned_path)
        outputs["aligned"] = str(aligned_path)
        outputs["icp_rmse"] = result.final_rmse
        log.time_stage("pcd_reconstruction", t0)

        t0 = time.perf_counter()
        curve = evaluation.sweep(
            aligned,
            target,
            evaluation.SweepSpec(
                eps_min=cfg.get("sweep", "eps_min"),
                eps_max=cfg.get("sweep", "eps_max"),
                steps=cfg.get("sweep", "steps"),
                spacing=cfg.get("sweep", "spacing"),
            ),
            f_target=cfg.get("sweep", "f_target"),
        )
        curve_path = workdir / "curve.csv"
        _ensure_clear(curve_path, args.force)
        evaluation.write_curve_csv(curve, curve_path)
        log.time_stage("evaluation", t0)
        i_opt = curve.thresholds.index(curve.optimal_epsilon)
        outputs["curve"] = str(curve_path)
        outputs["optimal_epsilon"] = curve.optimal_epsilon
        outputs["fscore_at_optimal"] = curve.fscore[i_opt]
        print(
            f"pipeline: optimal epsilon {curve.optimal_epsilon:g} m, "
            f"F-score {evaluation.display_score(curve.fscore[i_opt])}"
        )

    log.outputs = outputs
    log.write(_summary_path(args, workdir / "pipeline"), True)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--summary-out", help="run summary JSON path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="turnscan",
        description="Turntable video -> posed frames -> metric, evaluated point cloud.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-frames", help="dump video frames at a fixed rate")
    p.add_argument("--video", required=True)
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ffmpeg-binary")
    _add_common(p)
    p.set_defaults(func=cmd_extract_frames)

    p = sub.add_parser("select-fps", help="find the lowest fully-registering frame rate")
    p.add_argument("--video", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--fps-candidates", type=_fps_list)
    p.add_argument("--ffmpeg-binary")
    p.add_argument("--colmap-binary")
    p.add_argument("--threads", type=int)
    p.add_argument("--report-out")
    _add_common(p)
    p.set_defaults(func=cmd_select_fps)

    p = sub.add_parser("run-sfm", help="run feature extraction, matching, and mapping")
    p.add_argument("--images", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--colmap-binary")
    p.add_argument("--threads", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_run_sfm)

    p = sub.add_parser("convert-poses", help="sparse model -> camera-to-world manifest")
    p.add_argument("--model", required=True, help="sparse model directory")
    p.add_argument("--out", required=True)
    p.add_argument("--axis-convention", choices=list(colmap_ingest.AXIS_CONVENTIONS))
    p.add_argument("--frames-dir", help="also report unregistered frames from this directory")
    _add_common(p)
    p.set_defaults(func=cmd_convert_poses)

    p = sub.add_parser("crop", help="keep points inside an axis-aligned box")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--box-min", type=_vec3, required=True)
    p.add_argument("--box-max", type=_vec3, required=True)
    p.add_argument("--format", choices=["binary_le", "ascii"], default="binary_le")
    _add_common(p)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("sor", help="statistical outlier removal")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--std-ratio", type=float)
    p.add_argument("--removed-out", help="write removed indices JSON here")
    p.add_argument("--format", choices=["binary_le", "ascii"], default="binary_le")
    _add_common(p)
    p.set_defaults(func=cmd_sor)

    p = sub.add_parser("calibrate", help="fit the reference ball and compute metric scale")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="write the rescaled cloud here")
    p.add_argument("--ball-roi-min", type=_vec3)
    p.add_argument("--ball-roi-max", type=_vec3)
    p.add_argument("--reference-radius", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--inlier-tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--calibration-out", help="calibration JSON path")
    p.add_argument("--format", choices=["binary_le", "ascii"], default="binary_le")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("icp", help="align a source cloud onto a target cloud")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--output", help="write the aligned source here")
    p.add_argument("--transform-out", help="transform JSON path")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--max-correspondence-dist", type=float)
    p.add_argument("--convergence-delta", type=float)
    p.add_argument("--subsample-to", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=["binary_le", "ascii"], default="binary_le")
    _add_common(p)
    p.set_defaults(func=cmd_icp)

    p = sub.add_parser("eval", help="precision/recall/F-score threshold sweep")
    p.add_argument("--reconstruction", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out", required=True, help="curve CSV path")
    p.add_argument("--eps-min", type=float)
    p.add_argument("--eps-max", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--spacing", choices=["linear", "log"])
    p.add_argument("--f-target", type=float)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate the synthetic end-to-end fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run all configured stages in order")
    p.add_argument("--video")
    p.add_argument("--workdir")
    p.add_argument("--exported-cloud")
    p.add_argument("--ground-truth")
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return ap


_ERROR_EXITS = (
    # Checked most-specific first; order matters for subclasses.
    ((ToolNotFound,), EXIT_TOOL_NOT_FOUND),
    ((ToolFailure, NoModelProduced, fps_select.ProbeFailure), EXIT_TOOL_FAILURE),
    ((OverwriteRefused,), EXIT_OVERWRITE),
    ((colmap_ingest.MissingFile, FileNotFoundError), EXIT_MISSING_INPUT),
    ((ConfigError,), EXIT_MALFORMED),
    ((IoError,), EXIT_IO),
)


def _exit_code_for(exc: BaseException) -> int:
    from . import pointcloud

    if isinstance(exc, fps_select.ProbeFailure) and isinstance(exc.cause, OverwriteRefused):
        return EXIT_OVERWRITE
    for classes, code in _ERROR_EXITS:
        if isinstance(exc, classes):
            return code
    if isinstance(
        exc,
        (
            pointcloud.UnsupportedFormat,
            pointcloud.MalformedHeader,
            pointcloud.TruncatedBody,
            colmap_ingest.MalformedRecord,
            colmap_ingest.UnknownCameraModel,
            colmap_ingest.TruncatedFile,
            colmap_ingest.MagicMismatch,
        ),
    ):
        return EXIT_MALFORMED
    if isinstance(exc, (TurnscanError, ValueError)):
        return EXIT_DEGENERATE
    if isinstance(exc, OSError):
        return EXIT_IO
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg_path = getattr(args, "config", None)
    try:
        cfg = load_config(cfg_path)
        return args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code = _exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


def entrypoint() -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
