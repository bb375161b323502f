"""Tensor Gauss-Legendre rules on intervals, boxes, spheres, cube surfaces
and the cubic (l-infinity) annulus."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_interval(a, b, n):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def gauss_box(lo, hi, n, subdivisions=1):
    """Composite tensor Gauss rule on the box [lo, hi].

    Each axis is split into ``subdivisions`` equal panels with ``n`` nodes
    per panel. Returns ``(points, weights)`` with shapes ``(Q, 3)`` and
    ``(Q,)``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = []
    for k in range(3):
        edges = np.linspace(lo[k], hi[k], subdivisions + 1)
        xs, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = gauss_interval(a, b, n)
            xs.append(x)
            ws.append(w)
        axes.append((np.concatenate(xs), np.concatenate(ws)))
    X, Y, Z = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing="ij")
    WX, WY, WZ = np.meshgrid(axes[0][1], axes[1][1], axes[2][1], indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return pts, (WX * WY * WZ).ravel()


def gauss_sphere(radius, n_theta, n_phi=None):
    """Product rule on the sphere of given radius centred at the origin.

    Gauss-Legendre in ``cos(theta)`` and in ``phi`` over ``[0, 2 pi]``.
    Returns points, outward unit normals and area weights.
    """
    if n_phi is None:
        n_phi = 2 * n_theta
    mu, wmu = gauss_interval(-1.0, 1.0, n_theta)
    ph, wph = gauss_interval(0.0, 2.0 * np.pi, n_phi)
    MU, PH = np.meshgrid(mu, ph, indexing="ij")
    st = np.sqrt(1.0 - MU**2)
    normals = np.stack([st * np.cos(PH), st * np.sin(PH), MU], axis=-1).reshape(-1, 3)
    weights = (np.outer(wmu, wph) * radius**2).ravel()
    return radius * normals, normals, weights


def gauss_cube_surface(center, half_width, n, subdivisions=1):
    """Tensor rule on the six faces of an axis-aligned cube.

    Returns points, outward unit normals and area weights.
    """
    center = np.asarray(center, dtype=float)
    h = float(half_width)
    edges = np.linspace(-h, h, subdivisions + 1)
    s, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_interval(a, b, n)
        s.append(x)
        ws.append(w)
    s = np.concatenate(s)
    ws = np.concatenate(ws)
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws).ravel()
    S1 = S1.ravel()
    S2 = S2.ravel()
    pts, nrm, wts = [], [], []
    for axis in range(3):
        others = [k for k in range(3) if k != axis]
        for sign in (-1.0, 1.0):
            p = np.empty((S1.size, 3))
            p[:, axis] = sign * h
            p[:, others[0]] = S1
            p[:, others[1]] = S2
            nv = np.zeros((S1.size, 3))
            nv[:, axis] = sign
            pts.append(p + center)
            nrm.append(nv)
            wts.append(W)
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(wts)


def gauss_cubic_annulus(center, inner, outer, n):
    """Tensor rule on A(center, inner, outer) = B_inf(outer) minus closed B_inf(inner).

    The annulus is split into the 26 boxes of the 3x3x3 partition of the
    outer cube that exclude the central one.
    """
    if not 0.0 <= inner < outer:
        raise ValueError(f"degenerate annulus: inner={inner}, outer={outer}")
    center = np.asarray(center, dtype=float)
    cuts = [-outer, -inner, inner, outer]
    pts, wts = [], []
    for i in range(3):
        for j in range(3):
            for k in range(3):
                if i == j == k == 1:
                    continue
                lo = np.array([cuts[i], cuts[j], cuts[k]])
                hi = np.array([cuts[i + 1], cuts[j + 1], cuts[k + 1]])
                if np.any(hi - lo <= 0.0):
                    continue
                p, w = gauss_box(lo, hi, n)
                pts.append(p)
                wts.append(w)
    return np.concatenate(pts) + center, np.concatenate(wts)


def gauss_cube_minus_ball(center, half_width, ball_radius, n_radial, n_angular):
    """Volume rule on the cube of given half width minus the concentric ball.

    Cubed-sphere split: each face of the cube spans a pyramid with apex at
    the centre, parametrised by ``center + t * h * (1, s1, s2)`` (permuted).
    The radial variable starts on the ball surface, so every panel is smooth.
    """
    if not 0.0 < ball_radius < half_width:
        raise ValueError("ball must lie strictly inside the cube")
    center = np.asarray(center, dtype=float)
    h = float(half_width)
    s, ws = gauss_interval(-1.0, 1.0, n_angular)
    tq, wt = _leggauss(n_radial)
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    W2 = np.outer(ws, ws)
    S1, S2, W2 = S1.ravel(), S2.ravel(), W2.ravel()
    rho = np.sqrt(1.0 + S1**2 + S2**2)
    t0 = ball_radius / (h * rho)
    # map Gauss nodes from [-1, 1] to [t0, 1] per angular node
    T = t0[:, None] + 0.5 * (1.0 - t0)[:, None] * (tq[None, :] + 1.0)
    WT = 0.5 * (1.0 - t0)[:, None] * wt[None, :]
    jac = h**3 * T**2
    weights = (W2[:, None] * WT * jac).ravel()
    pts = []
    for axis in range(3):
        others = [k for k in range(3) if k != axis]
        for sign in (-1.0, 1.0):
            d = np.empty((S1.size, 3))
            d[:, axis] = sign
            d[:, others[0]] = S1
            d[:, others[1]] = S2
            pts.append((h * T[:, :, None] * d[:, None, :]).reshape(-1, 3))
    return np.concatenate(pts) + center, np.tile(weights, 6)
