"""Command-line entry point.

Every subcommand reads its inputs from disk and writes its outputs under
``--out`` with fixed names, so stages chain through files::

    synth      -> OUT/frames/, OUT/ground_truth.json
    segment    -> OUT/segment/frame_NNN.<fmt>, OUT/segment/poses.json
    integrate  -> OUT/grid.tsdf
    extract    -> OUT/surface.<fmt>
    cluster    -> OUT/clusters/cluster_NNN.<fmt>, OUT/clusters/clusters.json,
                  OUT/clusters/clusters_colored.<fmt>
    fit        -> OUT/fits.json, OUT/fitted/fruit_NNN.<fmt>
    eval       -> OUT/report.json, OUT/report.csv
    pipeline   -> all of the above

Each run also writes the fully resolved configuration to OUT/config.json.

Frame directories hold one sidecar per frame, ``frame_NNN.json``::

    {"color": "frame_000.png",        # 8-bit RGB (PNG or PPM)
     "depth": "frame_000_depth.npy",  # float32 .npy or 16-bit PNG
     "depth_scale": 1.0,              # meters per stored depth unit
     "pose": [tx, ty, tz, qx, qy, qz, qw],   # sensor -> world
     "intrinsics": [fx, fy, cx, cy],
     "mask": "frame_000_mask.png"}    # optional; replaces the color threshold

A 16-bit PNG depth in millimeters uses ``"depth_scale": 0.001``.

Exit codes: 0 on success, 2 for missing or invalid input, 1 when a stage
fails. Failures print a JSON record ``{"error", "stage", "exit_code"}`` on
stderr.
"""

from __future__ import annotations

import argparse
import colorsys
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import se_core
from .cloud import PointCloud, statistical_outlier_removal
from .cloudio import CloudFormatError, read_cloud, write_cloud
from .config import PipelineConfig, load_config
from .evaluation import (
    Detection,
    bounding_box_detection,
    build_report,
    clusters_from_surface,
    ground_truth_from_records,
    ground_truth_records,
    reports_to_csv,
)
from .fit import FitResult, fit_many
from .scene import generate_scene
from .segment import Cluster, RgbdFrame, mask_to_cloud, threshold_mask
from .tsdf import PosedCloud, TsdfGrid, extract_surface, integrate, load_grid, save_grid

STAGES = ("synth", "segment", "integrate", "extract", "cluster", "fit", "eval", "pipeline")


class UsageError(Exception):
    exit_code = 2


class StageError(Exception):
    exit_code = 1


# -- small I/O helpers ---------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"missing input {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _read_cloud(path: Path) -> PointCloud:
    try:
        return read_cloud(path)
    except FileNotFoundError:
        raise UsageError(f"missing input {path}") from None
    except (CloudFormatError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def pose_to_record(T) -> list[float]:
    from scipy.spatial.transform import Rotation

    T = np.asarray(T, dtype=float)
    q = Rotation.from_matrix(T[:3, :3]).as_quat()
    return [float(v) for v in (*T[:3, 3], *q)]


def record_to_pose(rec) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    if len(rec) != 7:
        raise UsageError("pose must be [tx, ty, tz, qx, qy, qz, qw]")
    T = np.eye(4)
    T[:3, :3] = Rotation.from_quat(rec[3:]).as_matrix()
    T[:3, 3] = rec[:3]
    return T


def palette(k: int) -> tuple[int, int, int]:
    """Distinct, deterministic color for cluster index ``k``."""
    h = (0.618033988749895 * k) % 1.0
    r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.95)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


# -- frames --------------------------------------------------------------


def write_frames(frames, out_dir: Path) -> None:
    from PIL import Image

    out_dir.mkdir(parents=True, exist_ok=True)
    for k, fr in enumerate(frames):
        stem = f"frame_{k:03d}"
        Image.fromarray(fr.color).save(out_dir / f"{stem}.png")
        np.save(out_dir / f"{stem}_depth.npy", fr.depth.astype(np.float32))
        _write_json(out_dir / f"{stem}.json", {
            "color": f"{stem}.png",
            "depth": f"{stem}_depth.npy",
            "depth_scale": 1.0,
            "pose": pose_to_record(fr.sensor_pose),
            "intrinsics": [fr.fx, fr.fy, fr.cx, fr.cy],
        })


def read_frames(frames_dir: Path):
    """Frames and optional precomputed masks, in sidecar name order."""
    from PIL import Image

    if not frames_dir.is_dir():
        raise UsageError(f"missing frames directory {frames_dir}")
    sidecars = sorted(p for p in frames_dir.glob("frame_*.json"))
    if not sidecars:
        raise UsageError(f"no frame_*.json sidecars in {frames_dir}")
    out = []
    for sc in sidecars:
        rec = _read_json(sc)
        try:
            color = np.asarray(Image.open(frames_dir / rec["color"]).convert("RGB"))
            dpath = frames_dir / rec["depth"]
            if dpath.suffix == ".npy":
                raw = np.load(dpath).astype(np.float64)
            else:
                raw = np.asarray(Image.open(dpath), dtype=np.float64)
            depth = raw * float(rec.get("depth_scale", 1.0))
            fx, fy, cx, cy = rec["intrinsics"]
            frame = RgbdFrame(color, depth, fx, fy, cx, cy, record_to_pose(rec["pose"]))
            mask = None
            if rec.get("mask"):
                mask = np.asarray(Image.open(frames_dir / rec["mask"]).convert("L")) > 0
        except (KeyError, OSError, ValueError) as exc:
            raise UsageError(f"{sc}: {exc}") from None
        out.append((sc.stem, frame, mask))
    return out


# -- stages --------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, out: Path) -> None:
    scene = generate_scene(cfg.scene)
    write_frames(scene.frames, out / "frames")
    _write_json(out / "ground_truth.json", {
        "fruits": ground_truth_records(scene.fruits),
        "unobserved": list(scene.unobserved),
    })


def stage_segment(cfg: PipelineConfig, frames_dir: Path, out: Path, fmt: str) -> None:
    seg = out / "segment"
    seg.mkdir(parents=True, exist_ok=True)
    entries = []
    for stem, frame, mask in read_frames(frames_dir):
        if mask is None:
            mask = threshold_mask(frame, cfg.color)
        local = mask_to_cloud(frame, mask, world=False)
        n_masked = len(local)
        if len(local):
            local = statistical_outlier_removal(local, cfg.filter.mean_k, cfg.filter.stddev_mult)
        name = f"{stem}.{fmt}"
        write_cloud(local, seg / name)
        entries.append({"cloud": name, "pose": pose_to_record(frame.sensor_pose),
                        "masked_points": n_masked, "filtered_points": len(local)})
    _write_json(seg / "poses.json", {"frames": entries})


def stage_integrate(cfg: PipelineConfig, seg_dir: Path, out: Path) -> None:
    listing = _read_json(seg_dir / "poses.json")
    grid = TsdfGrid(cfg.tsdf)
    for e in listing.get("frames", []):
        cloud = _read_cloud(seg_dir / e["cloud"])
        if len(cloud):
            integrate(grid, PosedCloud(cloud, record_to_pose(e["pose"])))
    save_grid(grid, out / "grid.tsdf")


def stage_extract(cfg: PipelineConfig, grid_path: Path, out: Path, fmt: str) -> None:
    if not grid_path.exists():
        raise UsageError(f"missing input {grid_path}")
    try:
        grid = load_grid(grid_path)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    write_cloud(extract_surface(grid), out / f"surface.{fmt}")


def _cluster_surface(cfg: PipelineConfig, surface: PointCloud) -> list[Cluster]:
    return clusters_from_surface(surface, cfg) if len(surface) else []


def stage_cluster(cfg: PipelineConfig, surface_path: Path, out: Path, fmt: str) -> None:
    surface = _read_cloud(surface_path)
    clusters = _cluster_surface(cfg, surface)
    cdir = out / "clusters"
    cdir.mkdir(parents=True, exist_ok=True)
    recs, colored = [], []
    for k, cl in enumerate(clusters):
        name = f"cluster_{k:03d}.{fmt}"
        write_cloud(cl.points, cdir / name)
        recs.append({"cloud": name, "center": [float(v) for v in cl.center], "point_count": len(cl)})
        colored.append(PointCloud(cl.points.points, np.tile(palette(k), (len(cl), 1))))
    write_cloud(PointCloud.concat(colored) if colored else PointCloud(np.empty((0, 3))),
                cdir / f"clusters_colored.{fmt}")
    _write_json(cdir / "clusters.json", {"clusters": recs, "surface_points": len(surface)})


def _load_clusters(cdir: Path) -> list[Cluster]:
    listing = _read_json(cdir / "clusters.json")
    out = []
    for rec in listing.get("clusters", []):
        pts = _read_cloud(cdir / rec["cloud"])
        out.append(Cluster(pts, np.arange(len(pts)), np.asarray(rec["center"], dtype=float)))
    return out


def _clusters_from_input(cfg: PipelineConfig, path: Path) -> list[Cluster]:
    if path.is_dir():
        return _load_clusters(path)
    return _cluster_surface(cfg, _read_cloud(path))


def stage_fit(cfg: PipelineConfig, input_path: Path, out: Path, fmt: str, allow_empty: bool = False) -> None:
    clusters = _clusters_from_input(cfg, input_path)
    if not clusters and not allow_empty:
        raise StageError("no clusters")
    fits = fit_many(clusters, cfg.fit, cfg.threads)
    fdir = out / "fitted"
    fdir.mkdir(parents=True, exist_ok=True)
    recs = []
    for k, res in enumerate(fits):
        rec = res.to_record()
        rec["id"] = f"det_{k}"
        rec["residual_rms"] = res.residual_rms
        recs.append(rec)
        samples = se_core.sample_surface(res.shape, 32)
        write_cloud(PointCloud(samples, np.tile(palette(k), (len(samples), 1))), fdir / f"fruit_{k:03d}.{fmt}")
    _write_json(out / "fits.json", {"fits": recs})


def stage_eval(cfg: PipelineConfig, gt_path: Path, fits_path: Path, out: Path,
               clusters_dir: Path | None = None) -> None:
    gt = _read_json(gt_path)
    fits = _read_json(fits_path)
    try:
        gts = ground_truth_from_records(gt["fruits"] if isinstance(gt, dict) else gt)
        fit_recs = fits["fits"] if isinstance(fits, dict) else fits
        dets = []
        for k, rec in enumerate(fit_recs):
            res = FitResult.from_record(rec)
            if res.converged:
                dets.append(Detection.from_fit(res, rec.get("id", f"det_{k}")))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed ground truth or fits: {exc}") from None
    report = build_report(gts, dets, cfg.eval.max_center_dist, cfg.eval.thresholds)
    report.stage_counts = {"fits": len(fit_recs), "converged_fits": len(dets)}
    if clusters_dir is not None and (clusters_dir / "clusters.json").exists():
        clusters = _load_clusters(clusters_dir)
        boxes = [bounding_box_detection(c, f"det_{k}") for k, c in enumerate(clusters)]
        report.baseline = build_report(gts, boxes, cfg.eval.max_center_dist, cfg.eval.thresholds,
                                       method="bounding_box")
        report.stage_counts["clusters"] = len(clusters)
    _write_text(out / "report.json", report.to_json() + "\n")
    _write_text(out / "report.csv", reports_to_csv([report]))


def stage_pipeline(cfg: PipelineConfig, input_path: Path | None, out: Path, fmt: str) -> None:
    if input_path is None:
        stage_synth(cfg, out)
        frames_dir, gt_path = out / "frames", out / "ground_truth.json"
    else:
        frames_dir = input_path
        gt_path = input_path / "ground_truth.json"
        if not gt_path.exists():
            gt_path = input_path.parent / "ground_truth.json"
    stage_segment(cfg, frames_dir, out, fmt)
    stage_integrate(cfg, out / "segment", out)
    stage_extract(cfg, out / "grid.tsdf", out, fmt)
    stage_cluster(cfg, out / f"surface.{fmt}", out, fmt)
    # an empty scene is a valid, empty result here rather than a fit failure
    stage_fit(cfg, out / "clusters", out, fmt, allow_empty=True)
    if gt_path.exists():
        stage_eval(cfg, gt_path, out / "fits.json", out, out / "clusters")


# -- argument handling ---------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration file")
    common.add_argument("--seed", type=int, help="scene seed (overrides scene.seed)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--format", choices=("pcd", "ply"), default="pcd", help="point cloud format")
    common.add_argument("--threads", type=int, help="worker threads for fitting")

    p = _Parser(prog="fruitshape", description="Superellipsoid fruit shape completion pipeline.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="render a synthetic scene")
    s = sub.add_parser("segment", parents=[common], help="frames -> filtered fruit clouds")
    s.add_argument("frames", type=Path)
    s = sub.add_parser("integrate", parents=[common], help="fruit clouds + poses -> TSDF grid")
    s.add_argument("segment_dir", type=Path)
    s = sub.add_parser("extract", parents=[common], help="TSDF grid -> surface cloud")
    s.add_argument("grid", type=Path)
    s = sub.add_parser("cluster", parents=[common], help="surface cloud -> clusters with centers")
    s.add_argument("surface", type=Path)
    s = sub.add_parser("fit", parents=[common], help="surface cloud or clusters dir -> fits")
    s.add_argument("input", type=Path)
    s = sub.add_parser("eval", parents=[common], help="ground truth + fits -> report")
    s.add_argument("ground_truth", type=Path)
    s.add_argument("fits", type=Path)
    s.add_argument("--clusters", type=Path, help="clusters dir for the bounding-box baseline")
    s = sub.add_parser("pipeline", parents=[common], help="run every stage")
    s.add_argument("input", type=Path, nargs="?", help="frames dir (default: synthesize a scene)")
    return p


def resolve_config(args) -> PipelineConfig:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"missing config {args.config}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    if args.seed is not None:
        cfg = replace(cfg, scene=replace(cfg.scene, seed=args.seed))
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    return cfg


def run(argv=None) -> int:
    stage = None
    try:
        args = build_parser().parse_args(argv)
        stage = args.command
        cfg = resolve_config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "config.json", cfg.dumps() + "\n")
        fmt = args.format
        if stage == "synth":
            stage_synth(cfg, out)
        elif stage == "segment":
            stage_segment(cfg, args.frames, out, fmt)
        elif stage == "integrate":
            stage_integrate(cfg, args.segment_dir, out)
        elif stage == "extract":
            stage_extract(cfg, args.grid, out, fmt)
        elif stage == "cluster":
            stage_cluster(cfg, args.surface, out, fmt)
        elif stage == "fit":
            stage_fit(cfg, args.input, out, fmt)
        elif stage == "eval":
            stage_eval(cfg, args.ground_truth, args.fits, out, args.clusters)
        elif stage == "pipeline":
            stage_pipeline(cfg, args.input, out, fmt)
    except (UsageError, StageError) as exc:
        _report_error(str(exc), stage, exc.exit_code)
        return exc.exit_code
    except Exception as exc:  # any other failure inside a stage
        _report_error(f"{type(exc).__name__}: {exc}", stage, 1)
        return 1
    return 0


def _report_error(message, stage, code) -> None:
    sys.stderr.write(json.dumps({"error": message, "stage": stage, "exit_code": code}) + "\n")


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
