"""Ground-truth matching, accuracy metrics and the end-to-end pipeline."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import se_core
from .cloud import PointCloud, estimate_normals, statistical_outlier_removal
from .config import PipelineConfig
from .fit import FitResult, fit_many
from .scene import GroundTruthFruit, Scene
from .segment import Cluster, estimate_center, euclidean_cluster, mask_to_cloud, threshold_mask
from .tsdf import PosedCloud, TsdfGrid, extract_surface, integrate

log = logging.getLogger(__name__)

THRESHOLD_NAMES = {float("-inf"): "all", 0.0: "ma0", 0.5: "ma50"}


def volume_accuracy(v_det: float, v_gt: float) -> float:
    """1 - |V_det - V_gt| / V_gt."""
    if not v_gt > 0:
        raise ValueError(f"ground-truth volume must be positive, got {v_gt!r}")
    return 1.0 - abs(v_det - v_gt) / v_gt


@dataclass(frozen=True)
class Detection:
    """Anything matchable: an id, a center and a volume."""

    id: str
    center: np.ndarray
    volume: float

    @classmethod
    def from_fit(cls, fit: FitResult, det_id: str) -> Detection:
        return cls(det_id, fit.shape.center, fit.volume)


@dataclass(frozen=True)
class MatchPair:
    gt_id: str
    det_id: str
    center_distance: float
    accuracy: float


@dataclass
class Matching:
    pairs: list
    unmatched_gt: list
    unmatched_det: list


def _as_detections(dets) -> list[Detection]:
    out = []
    for k, d in enumerate(dets):
        if isinstance(d, Detection):
            out.append(d)
        elif isinstance(d, FitResult):
            out.append(Detection.from_fit(d, f"det_{k}"))
        else:
            raise TypeError(f"cannot match object of type {type(d).__name__}")
    return out


def match_detections(gts, dets, max_center_dist: float = 0.20,
                     min_accuracy: float = float("-inf")) -> Matching:
    """Greedy one-to-one matching by ascending center distance.

    A pair is admissible when its center distance is below
    ``max_center_dist`` and its volume accuracy exceeds ``min_accuracy``.
    """
    dets = _as_detections(dets)
    gts = list(gts)
    cands = []
    for i, g in enumerate(gts):
        v_gt = se_core.volume(g.shape)
        for j, d in enumerate(dets):
            dist = float(np.linalg.norm(np.asarray(d.center) - g.shape.center))
            acc = volume_accuracy(d.volume, v_gt)
            if dist < max_center_dist and acc > min_accuracy:
                cands.append((dist, i, j, acc))
    cands.sort(key=lambda c: (c[0], c[1], c[2]))
    used_g, used_d, pairs = set(), set(), []
    for dist, i, j, acc in cands:
        if i in used_g or j in used_d:
            continue
        used_g.add(i)
        used_d.add(j)
        pairs.append(MatchPair(gts[i].id, dets[j].id, dist, acc))
    return Matching(
        pairs,
        [g.id for i, g in enumerate(gts) if i not in used_g],
        [d.id for j, d in enumerate(dets) if j not in used_d],
    )


@dataclass
class ThresholdRow:
    min_accuracy: float
    count: int
    center_cm_mean: float
    acc_mean: float


@dataclass
class EvalReport:
    rows: dict
    pairs: list
    unmatched_gt: list
    unmatched_det: list
    n_gt: int
    n_det: int
    stage_counts: dict = field(default_factory=dict)
    baseline: EvalReport | None = None
    method: str = "superellipsoid"

    def count(self, name: str) -> int:
        return self.rows[name].count

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
            return v

        d = {
            "method": self.method,
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "rows": {k: {kk: enc(vv) for kk, vv in vars(r).items()} for k, r in self.rows.items()},
            "pairs": [vars(p) for p in self.pairs],
            "unmatched_gt": list(self.unmatched_gt),
            "unmatched_det": list(self.unmatched_det),
            "stage_counts": dict(self.stage_counts),
        }
        if self.baseline is not None:
            d["baseline"] = self.baseline.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        r = self.rows
        return {
            "fruits_all": r["all"].count,
            "fruits_ma0": r["ma0"].count,
            "fruits_ma50": r["ma50"].count,
            "center_cm_mean": r["all"].center_cm_mean,
            "acc_mean_all": r["all"].acc_mean,
            "acc_mean_ma0": r["ma0"].acc_mean,
            "acc_mean_ma50": r["ma50"].acc_mean,
        }


CSV_COLUMNS = ("trial", "fruits_all", "fruits_ma0", "fruits_ma50", "center_cm_mean",
               "acc_mean_all", "acc_mean_ma0", "acc_mean_ma50")


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for k, rep in enumerate(reports):
        row = {"trial": k, **rep.csv_row()}
        writer.writerow({key: (f"{v:.6f}" if isinstance(v, float) else v) for key, v in row.items()})
    return buf.getvalue()


def build_report(gts, dets, max_center_dist: float = 0.20,
                 thresholds=(float("-inf"), 0.0, 0.5), method: str = "superellipsoid") -> EvalReport:
    """Match once without an accuracy bound, then count the pairs that clear
    each threshold, so stricter rows are always subsets of looser ones."""
    dets = _as_detections(dets)
    base = match_detections(gts, dets, max_center_dist)
    rows = {}
    for thr in thresholds:
        sel = [p for p in base.pairs if p.accuracy > thr]
        name = THRESHOLD_NAMES.get(thr, f"ma{thr:g}")
        rows[name] = ThresholdRow(
            thr,
            len(sel),
            float(np.mean([p.center_distance for p in sel]) * 100.0) if sel else float("nan"),
            float(np.mean([p.accuracy for p in sel])) if sel else float("nan"),
        )
    return EvalReport(rows, base.pairs, base.unmatched_gt, base.unmatched_det, len(list(gts)), len(dets),
                      method=method)


def bounding_box_detection(cluster: Cluster, det_id: str) -> Detection:
    """Axis-aligned bounding-box volume and center of a cluster."""
    pts = cluster.points.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return Detection(det_id, 0.5 * (lo + hi), float(np.prod(hi - lo)))


@dataclass
class PipelineResult:
    report: EvalReport
    fruit_cloud: PointCloud
    grid: TsdfGrid
    surface: PointCloud
    clusters: list
    fits: list


def fuse_frames(frames, cfg: PipelineConfig, counts: dict | None = None) -> tuple[TsdfGrid, PointCloud]:
    """Mask, back-project, filter and integrate every frame."""
    counts = {} if counts is None else counts
    grid = TsdfGrid(cfg.tsdf)
    fruit_clouds = []
    n_masked = n_filtered = 0
    for frame in frames:
        mask = threshold_mask(frame, cfg.color)
        local = mask_to_cloud(frame, mask, world=False)
        n_masked += len(local)
        if not len(local):
            continue
        local = statistical_outlier_removal(local, cfg.filter.mean_k, cfg.filter.stddev_mult)
        n_filtered += len(local)
        obs = PosedCloud(local, frame.sensor_pose)
        integrate(grid, obs)
        fruit_clouds.append(PointCloud(obs.world_points(), local.colors))
    counts["masked_points"] = n_masked
    counts["filtered_points"] = n_filtered
    return grid, PointCloud.concat(fruit_clouds)


def clusters_from_surface(surface: PointCloud, cfg: PipelineConfig) -> list[Cluster]:
    """Cluster the surface and attach normals and a center estimate to each."""
    out = []
    for cl in euclidean_cluster(surface, cfg.cluster):
        pts = estimate_normals(cl.points, min(cfg.filter.normal_k, len(cl) - 1))
        cl = Cluster(pts, cl.indices)
        try:
            w = estimate_center(cl, cfg.cluster.lam)
        except ValueError:
            log.warning("cluster with %d points has no usable normals; skipped", len(cl))
            continue
        out.append(cl.with_center(w))
    return out


def run_pipeline(scene_or_frames, cfg: PipelineConfig = PipelineConfig(), gts=None) -> PipelineResult:
    """Frames -> TSDF -> surface -> clusters -> fits -> report.

    ``scene_or_frames`` is a :class:`Scene` (ground truth taken from it) or a
    list of frames together with ``gts``. Fits that did not converge are not
    counted as detections. The report's ``baseline`` holds the bounding-box
    estimator evaluated on the same clusters.
    """
    if isinstance(scene_or_frames, Scene):
        frames = scene_or_frames.frames
        gts = scene_or_frames.fruits if gts is None else gts
    else:
        frames = list(scene_or_frames)
    gts = list(gts or [])
    counts = {"frames": len(frames)}
    grid, fruit_cloud = fuse_frames(frames, cfg, counts)
    surface = extract_surface(grid) if grid.blocks else PointCloud(np.empty((0, 3)))
    counts["surface_points"] = len(surface)
    clusters = clusters_from_surface(surface, cfg) if len(surface) else []
    counts["clusters"] = len(clusters)
    counts["clustered_points"] = int(sum(len(c) for c in clusters))
    fits = fit_many(clusters, cfg.fit, cfg.threads)
    dets = [Detection.from_fit(f, f"det_{k}") for k, f in enumerate(fits) if f.converged]
    counts["converged_fits"] = len(dets)
    report = build_report(gts, dets, cfg.eval.max_center_dist, cfg.eval.thresholds)
    report.stage_counts = counts
    boxes = [bounding_box_detection(c, f"det_{k}") for k, c in enumerate(clusters)]
    report.baseline = build_report(gts, boxes, cfg.eval.max_center_dist, cfg.eval.thresholds,
                                   method="bounding_box")
    return PipelineResult(report, fruit_cloud, grid, surface, clusters, fits)


def ground_truth_records(gts) -> list[dict]:
    recs = []
    for g in gts:
        s = g.shape
        recs.append({
            "id": g.id, "a": s.a, "b": s.b, "c": s.c, "eps1": s.eps1, "eps2": s.eps2,
            "tx": s.t[0], "ty": s.t[1], "tz": s.t[2], "phi": s.rot[0], "theta": s.rot[1], "psi": s.rot[2],
            "volume_m3": se_core.volume(s),
            "occluder_normal": list(g.occluder_normal), "occlusion": g.occlusion,
        })
    return recs


def ground_truth_from_records(recs) -> list[GroundTruthFruit]:
    out = []
    for r in recs:
        shape = se_core.Superellipsoid(r["a"], r["b"], r["c"], r["eps1"], r["eps2"],
                                       (r["tx"], r["ty"], r["tz"]), (r["phi"], r["theta"], r["psi"]))
        out.append(GroundTruthFruit(shape, r["id"], tuple(r.get("occluder_normal", (0, 0, 1))),
                                    float(r.get("occlusion", 0.0))))
    return out
