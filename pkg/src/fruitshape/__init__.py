"""Superellipsoid shape completion for partially observed fruits.

Point clouds of red fruit are fused in a truncated signed distance field,
the extracted surface is split into clusters, and each cluster is fitted with
a superellipsoid whose closed-form volume is compared to ground truth.
"""

from .cloud import KnnIndex, PointCloud, SmallCloudWarning, estimate_normals, statistical_outlier_removal
from .cloudio import CloudFormatError, read_cloud, write_cloud
from .config import EvalConfig, FilterConfig, PipelineConfig, load_config
from .evaluation import (
    Detection,
    EvalReport,
    build_report,
    match_detections,
    run_pipeline,
    volume_accuracy,
)
from .fit import FitConfig, FitResult, fit_many, fit_superellipsoid, jacobian, residuals
from .scene import GroundTruthFruit, Scene, SceneSpec, generate_scene, render_scene
from .se_core import Superellipsoid, beta_projection, implicit_value, radial_distance, sample_surface, volume
from .segment import (
    Cluster,
    ClusterParams,
    ColorThreshold,
    RgbdFrame,
    estimate_center,
    euclidean_cluster,
    mask_to_cloud,
    threshold_mask,
)
from .tsdf import PosedCloud, TsdfConfig, TsdfGrid, extract_surface, integrate, load_grid, save_grid

__version__ = "0.1.0"

__all__ = [
    "CloudFormatError", "Cluster", "ClusterParams", "ColorThreshold", "Detection", "EvalConfig",
    "EvalReport", "FilterConfig", "FitConfig", "FitResult", "GroundTruthFruit", "KnnIndex",
    "PipelineConfig", "PointCloud", "PosedCloud", "RgbdFrame", "Scene", "SceneSpec",
    "SmallCloudWarning", "Superellipsoid", "TsdfConfig", "TsdfGrid", "beta_projection",
    "build_report", "estimate_center", "estimate_normals", "euclidean_cluster", "extract_surface",
    "fit_many", "fit_superellipsoid", "generate_scene", "implicit_value", "integrate", "jacobian",
    "load_config", "load_grid", "mask_to_cloud", "match_detections", "radial_distance",
    "read_cloud", "render_scene", "residuals", "run_pipeline", "sample_surface", "save_grid",
    "statistical_outlier_removal", "threshold_mask", "volume", "volume_accuracy", "write_cloud",
]
