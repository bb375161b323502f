"""Compactly supported divergence-free test fields.

w(x) = curl(phi(y) A) = (1/s) grad phi(y) x A with y = (x - c)/s and
phi(y) = exp(1 - 1/(1 - |y|^2)) on the unit ball (peak value 1 at 0).
Writing t = 1 - r^2, the radial derivatives used below are

    phi'/r        = -2 phi / t^2
    (phi'/r)'/r   = -4 (2t - 1) phi / t^4
    lap phi       = 2 (t^2 - 6t + 2) phi / t^4
    (lap phi)'/r  = 4 (2t^3 - 19t^2 + 14t - 2) phi / t^6
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import quadrature


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    return eps


_EPS = _levi_civita()


def _radial(r2):
    """phi, phi'/r, (phi'/r)'/r, (lap phi)'/r at squared radii r2 (zero outside the ball)."""
    r2 = np.asarray(r2, dtype=float)
    out = [np.zeros_like(r2) for _ in range(4)]
    ins = r2 < 1.0
    t = 1.0 - r2[ins]
    phi = np.exp(1.0 - 1.0 / t)
    out[0][ins] = phi
    out[1][ins] = -2.0 * phi / t**2
    out[2][ins] = -4.0 * (2.0 * t - 1.0) * phi / t**4
    out[3][ins] = 4.0 * (2.0 * t**3 - 19.0 * t**2 + 14.0 * t - 2.0) * phi / t**6
    return out


@dataclass(frozen=True)
class TestField:
    center: tuple
    scale: float
    amplitude: tuple

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "amplitude", tuple(float(c) for c in self.amplitude))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def _local(self, x):
        x = np.asarray(x, dtype=float)
        y = (x - np.asarray(self.center)) / self.scale
        return y, np.sum(y * y, axis=-1)

    def __call__(self, x):
        y, r2 = self._local(x)
        _, g, _, _ = _radial(r2)
        return np.cross(g[..., None] * y, np.asarray(self.amplitude)) / self.scale

    def gradient(self, x):
        """G[..., i, l] = d w_i / d x_l."""
        y, r2 = self._local(x)
        _, g, gp, _ = _radial(r2)
        H = g[..., None, None] * np.eye(3) + gp[..., None, None] * y[..., :, None] * y[..., None, :]
        return np.einsum("ijk,...jl,k->...il", _EPS, H, np.asarray(self.amplitude)) / self.scale**2

    def laplacian(self, x):
        y, r2 = self._local(x)
        lp = _radial(r2)[3]
        return np.cross(lp[..., None] * y, np.asarray(self.amplitude)) / self.scale**3

    def support_box(self):
        c = np.asarray(self.center)
        return c - self.scale, c + self.scale

    def supported_in(self, box):
        lo, hi = self.support_box()
        return bool(np.all(lo > np.asarray(box.lo)) and np.all(hi < np.asarray(box.hi)))

    @cached_property
    def _profile(self):
        r = np.linspace(0.0, 1.0, 200_001)[:-1]
        _, g, gp, _ = _radial(r * r)
        return r, g, gp

    @property
    def w_inf(self):
        """sup |w| = |A| max_r r |phi'(r)/r| / s (attained for y orthogonal to A)."""
        r, g, _ = self._profile
        return float(np.linalg.norm(self.amplitude) * np.max(r * np.abs(g)) / self.scale)

    @property
    def grad_w_inf(self):
        """Bound on the spectral norm of grad w: |A| max_r max(|g|, |g + r^2 g'/r|) / s^2."""
        r, g, gp = self._profile
        h = np.maximum(np.abs(g), np.abs(g + r * r * gp))
        return float(np.linalg.norm(self.amplitude) * np.max(h) / self.scale**2)

    @property
    def w1inf_norm(self):
        return max(self.w_inf, self.grad_w_inf)

    def quadrature(self, n=24, subdivisions=2):
        """Gauss rule on the bounding cube of the support (integrands vanish outside)."""
        lo, hi = self.support_box()
        return quadrature.gauss_box(lo, hi, n, subdivisions)
