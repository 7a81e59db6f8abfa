"""Elementary geometry of the half-space model.

Reflections, the elastic two-body scattering map, phase-space membership,
cylinders around lines, and the closed-form circle/slab arc length used by
the grazing-velocity estimates.  Everything here is a pure function of its
arguments; the wall is always the hyperplane {x.e1 = 0} (shifted to
{x.e1 = eps/2} for spheres of diameter eps).

Vectors are numpy arrays of shape (d,) with d in {2, 3}; most operations
also accept stacked shapes (..., d).
"""

import math
from dataclasses import dataclass, field

import numpy as np

# Geometric membership tolerance for double-precision event arithmetic.
TOL = 1e-12

# |omega| may deviate from 1 by this much and still be renormalized
# instead of rejected (robust sampling).
OMEGA_NORMALIZE_TOL = 1e-9


def specular_reflect(v):
    """Reflect a velocity at the wall: v - 2 (v.e1) e1.

    Involutive and norm-preserving.  Accepts shape (..., d).
    """
    out = np.array(v, dtype=float, copy=True)
    out[..., 0] = -out[..., 0]
    return out


def shifted_reflect(x, eps):
    """Wall symmetry shifted by eps: x - 2 (x.e1) e1 + eps e1.

    For eps = 0 this is the plain mirror image.  Satisfies
    shifted_reflect(u, eps) - shifted_reflect(w, eps) ==
    specular_reflect(u) - specular_reflect(w).
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    out = np.array(x, dtype=float, copy=True)
    out[..., 0] = eps - out[..., 0]
    return out


def _check_unit_omega(omega):
    nrm = np.linalg.norm(omega, axis=-1)
    if np.any(np.abs(nrm - 1.0) > OMEGA_NORMALIZE_TOL):
        raise ValueError("omega is not a unit vector")
    return omega / nrm[..., None]


def scattering_map(v, v_star, omega):
    """Elastic hard-sphere exchange of normal velocity components.

    Returns (v', v_star') with
        v'      = v      - ((v - v_star).omega) omega
        v_star' = v_star + ((v - v_star).omega) omega
    Conserves kinetic energy and momentum, is an involution, and flips the
    sign of omega.(v_star - v).  omega must be unit up to 1e-9 (it is
    renormalized); larger deviations are rejected.  Accepts shape (..., d).
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = _check_unit_omega(np.asarray(omega, dtype=float))
    proj = np.sum((v - v_star) * omega, axis=-1)[..., None] * omega
    return v - proj, v_star + proj


def scattering_jacobian_det(v, v_star, omega, h=1e-5):
    """Central finite-difference Jacobian determinant of (v, v*) -> (v', v*').

    The scattering map is a linear isometry for fixed omega, so |det| = 1;
    this recomputes it numerically as an independent check.
    """
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    d = v.shape[-1]
    if h <= 0:
        raise ValueError("degenerate finite-difference step")

    def f(z):
        a, b = scattering_map(z[:d], z[d:], omega)
        return np.concatenate([a, b])

    z0 = np.concatenate([v, v_star])
    jac = np.empty((2 * d, 2 * d))
    for j in range(2 * d):
        zp = z0.copy()
        zm = z0.copy()
        zp[j] += h
        zm[j] -= h
        jac[:, j] = (f(zp) - f(zm)) / (2 * h)
    return np.linalg.det(jac)


@dataclass
class Configuration:
    """Positions and velocities of s particles tagged with a diameter.

    eps = 0 means point particles (only the wall constraint applies).
    x and v have shape (s, d).
    """

    eps: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.x.shape != self.v.shape:
            raise ValueError("positions and velocities must have equal shape")
        if self.eps < 0:
            raise ValueError("diameter must be >= 0")

    @property
    def s(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    def copy(self):
        return Configuration(self.eps, self.x.copy(), self.v.copy())

    def kinetic_energy(self):
        return 0.5 * float(np.sum(self.v * self.v))

    def speeds_sq(self):
        return np.sum(self.v * self.v, axis=1)


def phase_space_contains(cfg, tol=TOL):
    """True iff all wall and pair constraints hold within tol.

    For eps > 0: x_i.e1 >= eps/2 and |x_i - x_j| >= eps for every pair.
    For eps = 0: only x_i.e1 >= 0.
    """
    eps = cfg.eps
    if np.any(cfg.x[:, 0] < 0.5 * eps - tol):
        return False
    if eps > 0 and cfg.s > 1:
        diff = cfg.x[:, None, :] - cfg.x[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        iu = np.triu_indices(cfg.s, k=1)
        if np.any(dist[iu] < eps - tol):
            return False
    return True


@dataclass
class Cylinder:
    """Infinite cylinder of radius `radius` around the line anchor + R*axis."""

    anchor: np.ndarray
    axis: np.ndarray
    radius: float

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.axis = np.asarray(self.axis, dtype=float)
        if np.linalg.norm(self.axis) <= 0:
            raise ValueError("axis must be nonzero")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")

    def contains(self, x):
        """Distance of x - anchor from the axis line through 0 is <= radius."""
        return (
            point_line_distance(np.asarray(x, dtype=float) - self.anchor, self.axis)
            <= self.radius
        )


def point_line_distance(p, w):
    """Norm of the component of p orthogonal to w (w nonzero).

    Vectorized over leading axes of p; w may broadcast against p.
    """
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    wn = w / np.linalg.norm(w, axis=-1, keepdims=True)
    resid = p - np.sum(p * wn, axis=-1, keepdims=True) * wn
    return np.linalg.norm(resid, axis=-1)


def cylinder_contains(cyl, x):
    return cyl.contains(x)


def _clamped_arccos(u):
    return math.acos(min(1.0, max(-1.0, u)))


def sphere_slab_arc_2d(p, r, alpha):
    """Arc length of the circle {|y - x| = r}, x.e1 = p, inside {|y.e1| <= alpha}.

    Closed form 2 r (arccos(-(alpha+p)/r) - arccos((alpha-p)/r)), with the
    arccos arguments clamped to [-1, 1] so the formula covers the
    degenerate cases (circle entirely inside or outside the slab).
    """
    if r <= 0:
        raise ValueError("radius must be > 0")
    if alpha <= 0:
        raise ValueError("slab half-width must be > 0")
    return 2.0 * r * (_clamped_arccos(-(alpha + p) / r) - _clamped_arccos((alpha - p) / r))


def sphere_surface_measure(d):
    """|S^{d-1}|: 2 pi for d=2, 4 pi for d=3."""
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def ball_volume(d, radius):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * radius**d


def sample_unit_sphere(rng, d, n=None):
    """Uniform points on S^{d-1}; shape (d,) or (n, d)."""
    shape = (d,) if n is None else (n, d)
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_ball(rng, d, radius, n=None):
    """Uniform points in B(0, radius); shape (d,) or (n, d)."""
    u = sample_unit_sphere(rng, d, n)
    m = 1 if n is None else n
    rad = radius * rng.random(m) ** (1.0 / d)
    if n is None:
        return u * rad[0]
    return u * rad[:, None]


def sphere_slab_area_mc(p, r, alpha, d, samples, rng):
    """Monte Carlo surface measure of {|y - x| = r} inside {|y.e1| <= alpha}.

    x has e1-coordinate p.  Returns (area, standard_error).
    """
    pts = sample_unit_sphere(rng, d, samples)
    hits = np.abs(p + r * pts[:, 0]) <= alpha
    frac = hits.mean()
    total = sphere_surface_measure(d) * r ** (d - 1)
    se = math.sqrt(max(frac * (1 - frac), 1.0 / samples) / samples)
    return frac * total, se * total
