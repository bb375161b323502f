"""Exterior Stokes solution around a translating sphere of radius 1/a.

U^a[v](x) = 1/(4a) (3/|x| + 1/(a^2 |x|^3)) v
            + 3/(4a) (1/|x| - 1/(a^2 |x|^3)) (v.x) x / |x|^2
P^a[v](x) = 3/(2a) v.x / |x|^3

Inside the ball the velocity is extended by the constant v (zero gradient),
so superpositions are defined everywhere except at the centres.

Gradients are returned as ``G[..., i, j] = d U_i / d x_j``; the normal
derivative along ``n`` is ``G @ n``.
"""

from dataclasses import dataclass

import numpy as np

from . import quadrature

# Sampled constant for |grad U| + |P| <= C |v| / (a |x|^2) on |x| >= 2/a.
DECAY_CONSTANT = 10.0
MIN_SPHERE_ORDER = 4
_SURFACE_RTOL = 1e-12
_CHUNK = 1 << 21


class SingularPointError(ValueError):
    pass


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape[:-1]


def _velocity_kernel(a, v, d, r):
    # d: (..., 3), r: (...), v broadcastable to d
    inv_r = 1.0 / r
    inv_r3 = inv_r**3
    a2 = a * a
    alpha = (3.0 * inv_r + inv_r3 / a2) / (4.0 * a)
    beta = 3.0 * (inv_r3 - inv_r3 * inv_r * inv_r / a2) / (4.0 * a)
    vd = np.sum(v * d, axis=-1)
    return alpha[..., None] * v + (beta * vd)[..., None] * d


def _gradient_kernel(a, v, d, r):
    inv_r = 1.0 / r
    inv_r2 = inv_r * inv_r
    inv_r3 = inv_r2 * inv_r
    inv_r5 = inv_r3 * inv_r2
    a2 = a * a
    beta = 3.0 * (inv_r3 - inv_r5 / a2) / (4.0 * a)
    dalpha = -3.0 * (inv_r3 + inv_r5 / a2) / (4.0 * a)  # alpha'(r) / r
    dbeta = 3.0 * (-3.0 * inv_r5 + 5.0 * inv_r5 * inv_r2 / a2) / (4.0 * a)  # beta'(r) / r
    v = np.broadcast_to(v, d.shape)
    vd = np.sum(v * d, axis=-1)
    G = dalpha[..., None, None] * v[..., :, None] * d[..., None, :]
    G += (dbeta * vd)[..., None, None] * d[..., :, None] * d[..., None, :]
    G += beta[..., None, None] * d[..., :, None] * v[..., None, :]
    G += (beta * vd)[..., None, None] * np.eye(3)
    return G


def _pressure_kernel(a, v, d, r):
    return 1.5 / a * np.sum(v * d, axis=-1) / r**3


def _check_exterior(a, r):
    # points on the sphere itself are allowed up to rounding
    if np.any(r < (1.0 - _SURFACE_RTOL) / a):
        raise SingularPointError("point inside the sphere of radius 1/a")


def u_single(a, v, x):
    """Velocity U^a[v](x); equals v inside the ball of radius 1/a."""
    pts, shape = _as_points(x)
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r == 0.0):
        raise SingularPointError("singular point")
    out = np.empty_like(pts)
    inside = r < 1.0 / a
    out[inside] = v
    ext = ~inside
    out[ext] = _velocity_kernel(a, v, pts[ext], r[ext])
    return out.reshape(shape + (3,))


def p_single(a, v, x):
    """Pressure P^a[v](x) for |x| >= 1/a."""
    pts, shape = _as_points(x)
    r = np.linalg.norm(pts, axis=1)
    _check_exterior(a, r)
    return _pressure_kernel(a, np.asarray(v, dtype=float), pts, r).reshape(shape)


def grad_u_single(a, v, x):
    """Analytic gradient ``G[i, j] = d_j U_i`` on the closed exterior |x| >= 1/a."""
    pts, shape = _as_points(x)
    r = np.linalg.norm(pts, axis=1)
    _check_exterior(a, r)
    G = _gradient_kernel(a, np.asarray(v, dtype=float), pts, r)
    return G.reshape(shape + (3, 3))


def traction_single(a, v, x, n):
    """``d_n U - P n`` at exterior points ``x`` for unit normals ``n``."""
    n = np.asarray(n, dtype=float)
    norms = np.linalg.norm(n.reshape(-1, 3), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-12):
        raise ValueError("normal must be a unit vector")
    G = grad_u_single(a, v, x)
    P = p_single(a, v, x)
    return np.einsum("...ij,...j->...i", G, n) - P[..., None] * n


@dataclass(frozen=True)
class StressSample:
    point: np.ndarray
    normal: np.ndarray
    traction: np.ndarray


def stress_sample(a, v, x, n):
    x = np.asarray(x, dtype=float)
    n = np.asarray(n, dtype=float)
    return StressSample(point=x, normal=n, traction=traction_single(a, v, x, n))


def drag_sphere(a, v, quad_order=8):
    """Surface integral of the traction over |x| = 1/a.

    The normal is the outward normal of the fluid domain (pointing into
    the ball); with this orientation the result is (6 pi / a) v.
    """
    if quad_order < MIN_SPHERE_ORDER:
        raise ValueError(f"quad_order must be >= {MIN_SPHERE_ORDER}")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return np.zeros(3)
    pts, nout, w = quadrature.gauss_sphere(1.0 / a, quad_order)
    t = traction_single(a, v, pts, -nout)
    return w @ t


def sphere_pairing(a, v, field, quad_order=16):
    """Integral over |x| = 1/a of (d_n U - P n) . field(x), fluid-outward normal."""
    pts, nout, w = quadrature.gauss_sphere(1.0 / a, quad_order)
    t = traction_single(a, v, pts, -nout)
    return float(w @ np.sum(t * field(pts), axis=1))


def _cube_contains_ball(a, center_offset, half_width):
    # l-infinity distance from the sphere centre to the cube boundary
    gap = half_width - np.max(np.abs(center_offset))
    return gap > 1.0 / a


def flux_through_cube(a, v, center_offset, half_width, quad_per_face=16, subdivisions=2):
    """Traction integrated over the boundary of a cube enclosing the sphere.

    The cube is centred at ``center_offset`` relative to the sphere centre;
    the normal points out of the cube. Conservation of the normal stress
    makes the result equal to -(6 pi / a) v for any enclosing cube.
    """
    center_offset = np.asarray(center_offset, dtype=float)
    if not _cube_contains_ball(a, center_offset, half_width):
        raise ValueError("ball is not strictly inside the cube")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return np.zeros(3)
    pts, nrm, w = quadrature.gauss_cube_surface(center_offset, half_width, quad_per_face, subdivisions)
    return w @ traction_single(a, v, pts, nrm)


def cube_pairing(a, v, field, center_offset, half_width, quad_per_face=16, subdivisions=2):
    """Integral over the cube boundary of (d_n U - P n) . field(x), outward normal."""
    center_offset = np.asarray(center_offset, dtype=float)
    if not _cube_contains_ball(a, center_offset, half_width):
        raise ValueError("ball is not strictly inside the cube")
    pts, nrm, w = quadrature.gauss_cube_surface(center_offset, half_width, quad_per_face, subdivisions)
    t = traction_single(a, v, pts, nrm)
    return float(w @ np.sum(t * field(pts), axis=1))


def volume_pairing(a, v, grad_field, half_width, n_radial=24, n_angular=24):
    """Integral of grad U : grad field over the centred cube minus the ball.

    ``grad_field(x)`` returns ``(Q, 3, 3)`` gradients in the same index
    convention as :func:`grad_u_single`.
    """
    pts, w = quadrature.gauss_cube_minus_ball(np.zeros(3), half_width, 1.0 / a, n_radial, n_angular)
    G = grad_u_single(a, v, pts)
    return float(w @ np.einsum("qij,qij->q", G, grad_field(pts)))


def pde_residual(a, v, x, fd_step):
    """Central-difference estimates of -Lap U + grad P and div U at ``x``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    h = float(fd_step)
    if not np.any(v):
        return {"momentum_residual": np.zeros(3), "div_residual": 0.0}
    lap = -6.0 * u_single(a, v, x)
    gradp = np.zeros(3)
    div = 0.0
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        up = u_single(a, v, x + e)
        um = u_single(a, v, x - e)
        lap = lap + up + um
        gradp[k] = (p_single(a, v, x + e) - p_single(a, v, x - e)) / (2.0 * h)
        div += (up[k] - um[k]) / (2.0 * h)
    lap /= h * h
    return {"momentum_residual": -lap + gradp, "div_residual": float(div)}


@dataclass(frozen=True)
class StokesletSum:
    """Superposition of U^a[v_i](x - h_i) over sources (h_i, v_i)."""

    a: float
    centers: np.ndarray
    strengths: np.ndarray

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        s = np.asarray(self.strengths, dtype=float).reshape(-1, 3)
        if c.shape != s.shape:
            raise ValueError("centers and strengths must have the same length")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "strengths", s)

    @classmethod
    def from_cloud(cls, cloud, strengths=None):
        s = cloud.velocities if strengths is None else strengths
        return cls(a=float(cloud.n), centers=cloud.centers, strengths=s)

    def _chunks(self, pts):
        step = max(1, _CHUNK // max(1, len(self.centers)))
        for start in range(0, len(pts), step):
            yield slice(start, start + step)

    def _displacements(self, pts):
        d = pts[:, None, :] - self.centers[None, :, :]
        r = np.sqrt(np.einsum("qnk,qnk->qn", d, d))
        if np.any(r == 0.0):
            raise SingularPointError("evaluation point coincides with a source centre")
        return d, r

    def velocity(self, x, return_inside=False):
        pts, shape = _as_points(x)
        out = np.zeros_like(pts)
        inside_any = np.zeros(len(pts), dtype=bool)
        radius = 1.0 / self.a
        for sl in self._chunks(pts):
            d, r = self._displacements(pts[sl])
            inside = r < radius
            rr = np.where(inside, radius, r)
            u = _velocity_kernel(self.a, self.strengths[None, :, :], d, rr)
            u = np.where(inside[..., None], self.strengths[None, :, :], u)
            out[sl] = u.sum(axis=1)
            inside_any[sl] = inside.any(axis=1)
        out = out.reshape(shape + (3,))
        if return_inside:
            return out, inside_any.reshape(shape)
        return out

    __call__ = velocity

    def gradient(self, x):
        """Velocity gradient; zero contribution from a source inside its own ball."""
        pts, shape = _as_points(x)
        out = np.zeros((len(pts), 3, 3))
        radius = 1.0 / self.a
        for sl in self._chunks(pts):
            d, r = self._displacements(pts[sl])
            inside = r < radius
            rr = np.where(inside, radius, r)
            G = _gradient_kernel(self.a, self.strengths[None, :, :], d, rr)
            G = np.where(inside[..., None, None], 0.0, G)
            out[sl] = G.sum(axis=1)
        return out.reshape(shape + (3, 3))

    def pressure(self, x):
        pts, shape = _as_points(x)
        out = np.zeros(len(pts))
        radius = 1.0 / self.a
        for sl in self._chunks(pts):
            d, r = self._displacements(pts[sl])
            inside = r < radius
            rr = np.where(inside, radius, r)
            p = _pressure_kernel(self.a, self.strengths[None, :, :], d, rr)
            out[sl] = np.where(inside, 0.0, p).sum(axis=1)
        return out.reshape(shape)


def eval_sum(ssum, x):
    return ssum.velocity(x)


def eval_sum_grad(ssum, x):
    return ssum.gradient(x)


def eval_sum_pressure(ssum, x):
    return ssum.pressure(x)


def eval_sum_naive(ssum, x):
    """Reference loop over sources, one u_single call each."""
    pts, shape = _as_points(x)
    out = np.zeros_like(pts)
    for h, v in zip(ssum.centers, ssum.strengths):
        out += u_single(ssum.a, v, pts - h)
    return out.reshape(shape + (3,))
