"""Superellipsoid model: inside-outside function, radial distance, volume and
surface sampling.

Parameters follow the usual 11-dof layout: semi-axes ``a, b, c``, shape
exponents ``eps1`` (north-south) and ``eps2`` (east-west), a translation and
an intrinsic Z-Y-X Euler rotation ``(phi, theta, psi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# Lanczos approximation, g=7, n=9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_fn(x: float) -> float:
    """Gamma function for positive real arguments (Lanczos approximation)."""
    x = float(x)
    if not x > 0.0 or not math.isfinite(x):
        raise ValueError(f"gamma_fn is defined for positive finite x, got {x!r}")
    if x < 0.5:
        # reflection keeps the series in its accurate range
        return math.pi / (math.sin(math.pi * x) * gamma_fn(1.0 - x))
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def beta_fn(x: float, y: float) -> float:
    """Euler beta function B(x, y) = G(x) G(y) / G(x + y)."""
    if not (x > 0 and y > 0):
        raise ValueError(f"beta_fn requires positive arguments, got ({x!r}, {y!r})")
    return gamma_fn(x) * gamma_fn(y) / gamma_fn(x + y)


def rotation_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """Rotation for intrinsic Z-Y-X Euler angles: R = Rz(phi) Ry(theta) Rx(psi)."""
    cz, sz = math.cos(phi), math.sin(phi)
    cy, sy = math.cos(theta), math.sin(theta)
    cx, sx = math.cos(psi), math.sin(psi)
    return np.array(
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    )


@dataclass(frozen=True)
class Superellipsoid:
    a: float
    b: float
    c: float
    eps1: float
    eps2: float
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rot: tuple[float, float, float] = (0.0, 0.0, 0.0)
    _R: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("a", "b", "c", "eps1", "eps2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"Superellipsoid.{name} must be positive, got {v!r}")
        object.__setattr__(self, "t", tuple(float(v) for v in self.t))
        object.__setattr__(self, "rot", tuple(float(v) for v in self.rot))
        if len(self.t) != 3 or len(self.rot) != 3:
            raise ValueError("t and rot must have three components")
        object.__setattr__(self, "_R", rotation_matrix(*self.rot))

    @property
    def R(self) -> np.ndarray:
        return self._R.copy()

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.t, dtype=float)

    @property
    def axes(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])

    def to_vector(self) -> np.ndarray:
        """Flatten to ``[a, b, c, eps1, eps2, tx, ty, tz, phi, theta, psi]``."""
        return np.array([self.a, self.b, self.c, self.eps1, self.eps2, *self.t, *self.rot])

    @classmethod
    def from_vector(cls, x) -> Superellipsoid:
        x = [float(v) for v in x]
        return cls(x[0], x[1], x[2], x[3], x[4], tuple(x[5:8]), tuple(x[8:11]))

    def with_pose(self, t=None, rot=None) -> Superellipsoid:
        return replace(
            self,
            t=self.t if t is None else tuple(t),
            rot=self.rot if rot is None else tuple(rot),
        )


def to_local(s: Superellipsoid, p) -> np.ndarray:
    """Express world point(s) ``p`` in the superellipsoid frame: R^T (p - t)."""
    p = np.asarray(p, dtype=float)
    return (p - s.center) @ s._R


def to_world(s: Superellipsoid, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q @ s._R.T + s.center


def implicit_value(s: Superellipsoid, q) -> np.ndarray | float:
    """Inside-outside function on local coordinates; 1 on the surface."""
    q = np.asarray(q, dtype=float)
    x = np.abs(q[..., 0] / s.a)
    y = np.abs(q[..., 1] / s.b)
    z = np.abs(q[..., 2] / s.c)
    e = 2.0 / s.eps2
    f = (x**e + y**e) ** (s.eps2 / s.eps1) + z ** (2.0 / s.eps1)
    return f if f.ndim else float(f)


def beta_projection(s: Superellipsoid, q) -> np.ndarray | float:
    """Radial scale that maps ``q`` onto the surface: f(beta * q) == 1."""
    q = np.asarray(q, dtype=float)
    if np.any(np.all(q == 0.0, axis=-1)):
        raise ValueError("degenerate point at center")
    return implicit_value(s, q) ** (-s.eps1 / 2.0)


def radial_distance(s: Superellipsoid, q) -> np.ndarray | float:
    """Approximate distance ``|q| * |1 - f(q)^(-eps1/2)|`` to the surface.

    The exact center has no radial direction; it gets ``min(a, b, c)``.
    """
    q = np.asarray(q, dtype=float)
    r = np.linalg.norm(q, axis=-1)
    f = np.asarray(implicit_value(s, q))
    at_center = r == 0.0
    with np.errstate(divide="ignore"):
        d = r * np.abs(1.0 - np.where(at_center, 1.0, f) ** (-s.eps1 / 2.0))
    d = np.where(at_center, min(s.a, s.b, s.c), d)
    return d if d.ndim else float(d)


def volume(s: Superellipsoid) -> float:
    e1, e2 = s.eps1, s.eps2
    return 2.0 * s.a * s.b * s.c * e1 * e2 * beta_fn(e1 / 2.0 + 1.0, e1) * beta_fn(e2 / 2.0, e2 / 2.0)


def _spow(base: np.ndarray, exponent: float) -> np.ndarray:
    return np.sign(base) * np.abs(base) ** exponent


def sample_surface(s: Superellipsoid, resolution: int = 32, local: bool = False) -> np.ndarray:
    """Points on the surface from the signed-power parametrization.

    ``resolution`` steps are taken in each of latitude eta in [-pi/2, pi/2]
    and longitude omega in [-pi, pi); the two poles are emitted once each.
    Returns an ``(M, 3)`` array in world frame unless ``local`` is set.
    """
    if resolution < 8:
        raise ValueError("resolution must be >= 8")
    eta = np.linspace(-np.pi / 2, np.pi / 2, resolution)[1:-1]
    omega = np.linspace(-np.pi, np.pi, resolution, endpoint=False)
    eta, omega = np.meshgrid(eta, omega, indexing="ij")
    ce, se = _spow(np.cos(eta), s.eps1), _spow(np.sin(eta), s.eps1)
    q = np.stack(
        [
            s.a * ce * _spow(np.cos(omega), s.eps2),
            s.b * ce * _spow(np.sin(omega), s.eps2),
            s.c * se,
        ],
        axis=-1,
    ).reshape(-1, 3)
    q = np.vstack([[0.0, 0.0, -s.c], q, [0.0, 0.0, s.c]])
    return q if local else to_world(s, q)
