"""Bounded Levenberg-Marquardt fit of a superellipsoid to a point cluster.

The objective is, per point, the squared radial distance plus two priors:
one pulling the translation towards the cluster's estimated center ``w`` and
one pulling the semi-axes towards each other::

    sum_i [ d_i^2 + alpha |t - w|^2 + gamma ((a-b)^2 + (b-c)^2 + (c-a)^2) ]

With ``prior_per_point`` (default) the priors are summed once per point as
written above; otherwise they enter the cost once.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import se_core
from .se_core import Superellipsoid

PARAM_NAMES = ("a", "b", "c", "eps1", "eps2", "tx", "ty", "tz", "phi", "theta", "psi")


@dataclass(frozen=True)
class FitConfig:
    alpha: float = 0.1
    gamma: float = 0.1
    axis_bounds: tuple[float, float] = (0.02, 0.15)
    eps_bounds: tuple[float, float] = (0.3, 0.9)
    init_axis: float = 0.05
    init_eps: float = 0.5
    max_iterations: int = 100
    rel_cost_tol: float = 1e-8
    grad_tol: float = 1e-10
    damping_init: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 10.0
    damping_max: float = 1e16
    prior_per_point: bool = True
    fd_rel_step: float = 1e-6
    fd_abs_step: float = 1e-8

    def __post_init__(self):
        for lo, hi in (self.axis_bounds, self.eps_bounds):
            if not 0 < lo < hi:
                raise ValueError("bounds must satisfy 0 < lower < upper")
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(11, -np.inf)
        hi = np.full(11, np.inf)
        lo[:3], hi[:3] = self.axis_bounds
        lo[3:5], hi[3:5] = self.eps_bounds
        return lo, hi


@dataclass(frozen=True)
class FitResult:
    shape: Superellipsoid
    converged: bool
    final_cost: float
    iterations: int
    residual_rms: float
    point_count: int
    initial_cost: float = float("nan")
    cost_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def volume(self) -> float:
        return se_core.volume(self.shape)

    def to_record(self) -> dict:
        s = self.shape
        return {
            "a": s.a, "b": s.b, "c": s.c, "eps1": s.eps1, "eps2": s.eps2,
            "tx": s.t[0], "ty": s.t[1], "tz": s.t[2],
            "phi": s.rot[0], "theta": s.rot[1], "psi": s.rot[2],
            "volume_m3": self.volume,
            "converged": bool(self.converged),
            "final_cost": float(self.final_cost),
            "iterations": int(self.iterations),
            "point_count": int(self.point_count),
        }

    @classmethod
    def from_record(cls, rec: dict) -> FitResult:
        shape = Superellipsoid.from_vector([rec[k] for k in PARAM_NAMES])
        return cls(shape, bool(rec["converged"]), float(rec["final_cost"]), int(rec["iterations"]),
                   float(rec.get("residual_rms", float("nan"))), int(rec["point_count"]))


def _points_and_center(cluster):
    pts = getattr(cluster, "points", cluster)
    pts = getattr(pts, "points", pts)
    w = getattr(cluster, "center", None)
    return np.asarray(pts, dtype=float), w


def _residual_vector(x: np.ndarray, pts: np.ndarray, w: np.ndarray, cfg: FitConfig) -> np.ndarray:
    a, b, c, e1, e2 = x[:5]
    t = x[5:8]
    R = se_core.rotation_matrix(*x[8:11])
    q = (pts - t) @ R
    r = np.sqrt(np.einsum("ij,ij->i", q, q))
    e = 2.0 / e2
    f = (np.abs(q[:, 0] / a) ** e + np.abs(q[:, 1] / b) ** e) ** (e2 / e1) + np.abs(q[:, 2] / c) ** (2.0 / e1)
    at_center = r == 0.0
    with np.errstate(divide="ignore"):
        d = r * np.abs(1.0 - np.where(at_center, 1.0, f) ** (-e1 / 2.0))
    d[at_center] = min(a, b, c)
    scale = math.sqrt(len(pts)) if cfg.prior_per_point else 1.0
    sa = scale * math.sqrt(cfg.alpha)
    sg = scale * math.sqrt(cfg.gamma)
    prior = np.array([sa * (t[0] - w[0]), sa * (t[1] - w[1]), sa * (t[2] - w[2]),
                      sg * (a - b), sg * (b - c), sg * (c - a)])
    return np.concatenate([d, prior])


def residuals(shape: Superellipsoid, cluster, cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Stacked residuals: one radial distance per point followed by the three
    center-prior and three axis-prior rows."""
    pts, w = _points_and_center(cluster)
    if not len(pts):
        raise ValueError("cluster is empty")
    if w is None:
        raise ValueError("cluster has no center estimate")
    return _residual_vector(shape.to_vector(), pts, np.asarray(w, dtype=float), cfg)


def objective(shape: Superellipsoid, cluster, cfg: FitConfig = FitConfig()) -> float:
    return float(np.sum(residuals(shape, cluster, cfg) ** 2))


def _jacobian(x, pts, w, cfg):
    h = np.maximum(cfg.fd_rel_step * np.abs(x), cfg.fd_abs_step)
    cols = []
    for j in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h[j]
        xm[j] -= h[j]
        cols.append((_residual_vector(xp, pts, w, cfg) - _residual_vector(xm, pts, w, cfg)) / (2.0 * h[j]))
    return np.stack(cols, axis=1)


def jacobian(shape: Superellipsoid, cluster, cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Central finite-difference Jacobian of :func:`residuals` (rows x 11)."""
    pts, w = _points_and_center(cluster)
    if w is None:
        raise ValueError("cluster has no center estimate")
    return _jacobian(shape.to_vector(), pts, np.asarray(w, dtype=float), cfg)


def initial_shape(w, cfg: FitConfig = FitConfig()) -> Superellipsoid:
    ax, ep = cfg.init_axis, cfg.init_eps
    return Superellipsoid(ax, ax, ax, ep, ep, tuple(np.asarray(w, dtype=float)), (0.0, 0.0, 0.0))


def fit_superellipsoid(cluster, cfg: FitConfig = FitConfig(), init: Superellipsoid | None = None) -> FitResult:
    """Projected Levenberg-Marquardt on the regularised radial-distance cost.

    ``cluster`` needs ``points`` and an estimated ``center``. The result is
    flagged non-converged when the iteration cap is hit or the damping blows
    up without reaching a convergence test; such fits should be discarded.
    """
    pts, w = _points_and_center(cluster)
    if w is None:
        raise ValueError("cluster has no center estimate")
    w = np.asarray(w, dtype=float)
    if not len(pts):
        raise ValueError("cluster is empty")
    lo, hi = cfg.bounds()
    x = np.clip((init or initial_shape(w, cfg)).to_vector(), lo, hi)
    res = _residual_vector(x, pts, w, cfg)
    cost = float(res @ res)
    if not math.isfinite(cost):
        raise ValueError("non-finite cost at initialization")
    initial_cost = cost
    history = [cost]
    mu = cfg.damping_init
    converged = False
    it = 0
    J = None
    while it < cfg.max_iterations:
        it += 1
        if J is None:
            J = _jacobian(x, pts, w, cfg)
            g = J.T @ res
            JTJ = J.T @ J
        # parameters held at a bound by the gradient stay fixed this step
        free = ~(((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0)))
        if not free.any() or np.max(np.abs(g[free])) < cfg.grad_tol:
            converged = True
            break
        Jf = JTJ[np.ix_(free, free)]
        gf = g[free]
        diag = np.diag(Jf)
        D = np.diag(np.maximum(diag, 1e-12 * max(diag.max(), 1e-300)))
        accepted = False
        while mu <= cfg.damping_max:
            try:
                step_f = -np.linalg.solve(Jf + mu * D, gf)
            except np.linalg.LinAlgError:
                mu *= cfg.damping_up
                continue
            step = np.zeros_like(x)
            step[free] = step_f
            x_new = np.clip(x + step, lo, hi)
            dx = x_new - x
            res_new = _residual_vector(x_new, pts, w, cfg)
            cost_new = float(res_new @ res_new)
            if math.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            # reduction the linear model predicts for the unclipped step; a
            # projected step can point uphill, so it is not used here
            predicted = -(2.0 * gf @ step_f + step_f @ Jf @ step_f)
            if 0.0 < predicted <= cfg.rel_cost_tol * cost:
                # no model-predicted progress left: stationary within tolerance
                converged = True
                break
            mu *= cfg.damping_up
        if converged:
            break
        if not accepted:
            break
        rel_drop = (cost - cost_new) / cost if cost > 0 else 0.0
        x, res, cost = x_new, res_new, cost_new
        history.append(cost)
        mu = max(mu / cfg.damping_down, 1e-15)
        J = None
        if rel_drop < cfg.rel_cost_tol or cost == 0.0:
            converged = True
            break
    shape = Superellipsoid.from_vector(x)
    n = len(pts)
    rms = float(np.sqrt(np.mean(res[:n] ** 2)))
    return FitResult(shape, converged, cost, it, rms, n, initial_cost, tuple(history))


def fit_many(clusters, cfg: FitConfig = FitConfig(), threads: int = 1) -> list[FitResult]:
    """Fit clusters independently; results keep the input order."""
    clusters = list(clusters)
    if threads <= 1 or len(clusters) <= 1:
        return [fit_superellipsoid(c, cfg) for c in clusters]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: fit_superellipsoid(c, cfg), clusters))


def dump_results(results, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_record() for r in results], fh, indent=2)


def load_results(path) -> list[FitResult]:
    with open(path) as fh:
        return [FitResult.from_record(r) for r in json.load(fh)]


def config_dict(cfg: FitConfig) -> dict:
    return asdict(cfg)
