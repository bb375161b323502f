"""Staggered-grid solver for -lap u + grad p + 6 pi rho u = 6 pi j, div u = 0, u = 0 on the walls.

Velocities live on cell faces, pressure at cell centres. Normal velocity on
the walls is not an unknown (it is zero); tangential no-slip enters through
a ghost value equal to minus the first interior value. The saddle system is
reduced to the pressure Schur complement G^T A^-1 G, solved by conjugate
gradients with an exact sparse LU of each velocity block. The CG residual
is minus the discrete divergence of the current velocity, so the stopping
test is the divergence constraint itself.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

SIX_PI = 6.0 * np.pi


class BrinkmanConvergenceError(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class MacGrid:
    box: object
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in np.broadcast_to(np.asarray(self.shape), (3,)))
        if min(shape) < 2:
            raise ValueError("need at least 2 cells per axis")
        object.__setattr__(self, "shape", shape)

    @property
    def lo(self):
        return np.asarray(self.box.lo)

    @property
    def h(self):
        return self.box.widths / np.asarray(self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def cell_centers(self):
        axes = [self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.h[k] for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def face_axes(self, comp):
        """Coordinates along each axis of the faces carrying component ``comp`` (walls included)."""
        axes = []
        for k in range(3):
            if k == comp:
                axes.append(self.lo[k] + np.arange(self.shape[k] + 1) * self.h[k])
            else:
                axes.append(self.lo[k] + (np.arange(self.shape[k]) + 0.5) * self.h[k])
        return axes

    def face_points(self, comp):
        return np.stack(np.meshgrid(*self.face_axes(comp), indexing="ij"), axis=-1)


@dataclass(frozen=True)
class DensityFluxFields:
    grid: MacGrid
    rho: np.ndarray
    j: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float).reshape(self.grid.shape)
        j = np.asarray(self.j, dtype=float).reshape(self.grid.shape + (3,))
        if np.any(rho < 0):
            raise ValueError("rho must be nonnegative")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "j", j)

    def total_mass(self):
        return float(self.rho.sum() * self.grid.cell_volume)

    def total_flux(self):
        return self.j.reshape(-1, 3).sum(axis=0) * self.grid.cell_volume


def bin_empirical(cloud, grid, deposition="ngp"):
    """Deposit (1/N, v_i/N) per particle, divided by the cell volume.

    ``ngp`` puts each particle in its containing cell (the last cell owns
    the upper wall). ``cic`` spreads it trilinearly over the eight nearest
    cell centres, folding weights that fall outside the grid back onto the
    edge cells so that mass is conserved.
    """
    x = cloud.centers
    lo, hi = grid.lo, np.asarray(grid.box.hi)
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("particle outside grid")
    n = max(cloud.n, 1)
    shape = np.asarray(grid.shape)
    rho = np.zeros(grid.shape)
    j = np.zeros(grid.shape + (3,))
    if cloud.n == 0:
        return DensityFluxFields(grid, rho, j)
    s = (x - lo) / grid.h
    if deposition == "ngp":
        idx = np.minimum(np.floor(s).astype(int), shape - 1)
        stencil = [(idx, np.ones(len(x)))]
    elif deposition == "cic":
        s = s - 0.5
        i0 = np.floor(s).astype(int)
        t = s - i0
        stencil = []
        for corner in np.ndindex(2, 2, 2):
            c = np.asarray(corner)
            wgt = np.prod(np.where(c == 1, t, 1.0 - t), axis=1)
            stencil.append((np.clip(i0 + c, 0, shape - 1), wgt))
    else:
        raise ValueError(f"unknown deposition {deposition!r}")
    vol = grid.cell_volume
    for idx, wgt in stencil:
        flat = np.ravel_multi_index(idx.T, grid.shape)
        rho.reshape(-1)[:] += np.bincount(flat, wgt, rho.size) / (n * vol)
        for c in range(3):
            j[..., c].reshape(-1)[:] += np.bincount(flat, wgt * cloud.velocities[:, c], rho.size) / (n * vol)
    return DensityFluxFields(grid, rho, j)


def _lap_dirichlet_faces(m, h):
    """1D -d2 on the m-1 interior nodes of a grid with m cells, zero at the ends."""
    k = m - 1
    return sp.diags([-np.ones(k - 1), 2.0 * np.ones(k), -np.ones(k - 1)], [-1, 0, 1]) / h**2


def _lap_ghost_cells(m, h):
    """1D -d2 on m cell-centred nodes, walls half a cell away with odd reflection."""
    main = 2.0 * np.ones(m)
    main[0] = main[-1] = 3.0
    return sp.diags([-np.ones(m - 1), main, -np.ones(m - 1)], [-1, 0, 1]) / h**2


def _grad_1d(m, h):
    """(m-1) x m difference from cell centres to interior faces."""
    return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m)) / h


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b), c, format="csr")


@dataclass(frozen=True)
class _Operators:
    lap: tuple
    grad: tuple
    interior_shapes: tuple


def _operators(grid):
    n, h = grid.shape, grid.h
    lap, grad, shapes = [], [], []
    for comp in range(3):
        one_d = []
        for k in range(3):
            one_d.append(_lap_dirichlet_faces(n[k], h[k]) if k == comp else _lap_ghost_cells(n[k], h[k]))
        eye = [sp.identity(n[k] - 1 if k == comp else n[k]) for k in range(3)]
        lap.append(_kron3(one_d[0], eye[1], eye[2]) + _kron3(eye[0], one_d[1], eye[2])
                   + _kron3(eye[0], eye[1], one_d[2]))
        gparts = [_grad_1d(n[k], h[k]) if k == comp else sp.identity(n[k]) for k in range(3)]
        grad.append(_kron3(*gparts))
        shapes.append(tuple(n[k] - 1 if k == comp else n[k] for k in range(3)))
    return _Operators(tuple(lap), tuple(grad), tuple(shapes))


def _to_faces(cell_values, comp):
    """Average of the two cells adjacent to each interior face normal to ``comp``."""
    a = np.moveaxis(cell_values, comp, 0)
    return np.moveaxis(0.5 * (a[1:] + a[:-1]), 0, comp)


def _pad_walls(u_int, comp):
    pad = [(0, 0)] * u_int.ndim
    pad[comp] = (1, 1)
    return np.pad(u_int, pad)


@dataclass(frozen=True)
class MacField:
    grid: MacGrid
    u: tuple  # u[c] has shape grid.shape with axis c extended by one (walls included)
    p: np.ndarray
    iterations: int = 0
    residual_history: tuple = ()
    momentum_residual: float = 0.0
    divergence_residual: float = 0.0
    _interp: list = field(default_factory=list, repr=False, compare=False)

    def divergence(self):
        h = self.grid.h
        return sum(np.diff(self.u[c], axis=c) / h[c] for c in range(3))

    def cell_center_velocity(self):
        return np.stack([0.5 * (np.take(self.u[c], range(1, self.grid.shape[c] + 1), axis=c)
                                + np.take(self.u[c], range(self.grid.shape[c]), axis=c))
                         for c in range(3)], axis=-1)

    def _interpolators(self):
        if not self._interp:
            box = self.grid.box
            for c in range(3):
                axes = self.grid.face_axes(c)
                vals = self.u[c]
                for k in range(3):
                    if k != c:
                        axes[k] = np.concatenate([[box.lo[k]], axes[k], [box.hi[k]]])
                        pad = [(0, 0)] * 3
                        pad[k] = (1, 1)
                        vals = np.pad(vals, pad)
                self._interp.append(RegularGridInterpolator(axes, vals, method="linear"))
        return self._interp

    def eval(self, x):
        """Component-wise trilinear interpolation; tangential values are 0 on the walls."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if not np.all(self.grid.box.contains(x, strict=False)):
            raise ValueError("point outside the box")
        return np.stack([f(x) for f in self._interpolators()], axis=1)

    def __call__(self, x):
        return self.eval(x)


def eval_field(fld, x):
    return fld.eval(x)


def solve_brinkman(fields, grid=None, tol=1e-8, max_iter=500):
    """Discrete Brinkman solve; residuals are max-norms on the unit-box scale."""
    grid = fields.grid if grid is None else grid
    if grid is not fields.grid and grid != fields.grid:
        raise ValueError("fields were binned on a different grid")
    ops = _operators(grid)
    n_cells = int(np.prod(grid.shape))

    lus, rhs, blocks = [], [], []
    for c in range(3):
        rho_f = _to_faces(fields.rho, c).reshape(-1)
        block = (ops.lap[c] + sp.diags(SIX_PI * rho_f)).tocsc()
        blocks.append(block)
        lus.append(splu(block, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True}))
        rhs.append(SIX_PI * _to_faces(fields.j[..., c], c).reshape(-1))

    def velocity(p):
        return [lus[c].solve(rhs[c] - ops.grad[c] @ p) for c in range(3)]

    def schur(q):
        return sum(ops.grad[c].T @ lus[c].solve(ops.grad[c] @ q) for c in range(3))

    p = np.zeros(n_cells)
    u = velocity(p)
    r = sum(ops.grad[c].T @ u[c] for c in range(3))
    r -= r.mean()
    history = [float(np.abs(r).max())]
    d = r.copy()
    rr = r @ r
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise BrinkmanConvergenceError(
                f"Schur CG did not reach {tol:g} in {max_iter} iterations (last {history[-1]:.3e})", history)
        sd = schur(d)
        alpha = rr / (d @ sd)
        p += alpha * d
        r -= alpha * sd
        r -= r.mean()
        rr_new = r @ r
        d = r + (rr_new / rr) * d
        rr = rr_new
        it += 1
        history.append(float(np.abs(r).max()))
        if it % 25 == 0:
            u = velocity(p)
            r = sum(ops.grad[c].T @ u[c] for c in range(3))
            r -= r.mean()
            history[-1] = float(np.abs(r).max())
    p -= p.mean()
    u = velocity(p)

    mom = max(float(np.abs(blocks[c] @ u[c] + ops.grad[c] @ p - rhs[c]).max()) for c in range(3))
    u_full = tuple(_pad_walls(u[c].reshape(ops.interior_shapes[c]), c) for c in range(3))
    out = MacField(grid, u_full, p.reshape(grid.shape), it, tuple(history), mom, 0.0)
    div = float(np.abs(out.divergence()).max())
    object.__setattr__(out, "divergence_residual", div)
    if div > tol:
        raise BrinkmanConvergenceError(f"divergence {div:.3e} above {tol:g} after solve", history)
    return out


def energy_terms(fld, fields):
    """Discrete (dissipation, 6 pi int rho |u|^2, 6 pi int j.u) for the solved field.

    The dissipation is the sum of squared one-sided differences, wall ghost
    values included, so the identity dissipation + drag = work holds to
    solver tolerance.
    """
    grid = fld.grid
    h = grid.h
    vol = grid.cell_volume
    diss = drag = work = 0.0
    for c in range(3):
        uc = fld.u[c]
        inner = np.take(uc, range(1, grid.shape[c]), axis=c)
        for k in range(3):
            if k == c:
                g = np.diff(uc, axis=k) / h[k]
            else:
                pad = [(0, 0)] * 3
                pad[k] = (1, 1)
                ext = np.pad(inner, pad)
                sl_lo = [slice(None)] * 3
                sl_hi = [slice(None)] * 3
                sl_lo[k] = 0
                sl_hi[k] = -1
                ext[tuple(sl_lo)] = -np.take(inner, 0, axis=k)
                ext[tuple(sl_hi)] = -np.take(inner, -1, axis=k)
                # the wall gradient 2u/h acts over half a cell, so ghost gaps count half
                g = np.diff(ext, axis=k) / h[k]
                w = np.ones(g.shape[k])
                w[0] = w[-1] = 0.5
                shp = [1, 1, 1]
                shp[k] = -1
                g = g * np.sqrt(w).reshape(shp)
            diss += float(np.sum(g**2) * vol)
        rho_f = _to_faces(fields.rho, c)
        j_f = _to_faces(fields.j[..., c], c)
        drag += SIX_PI * float(np.sum(rho_f * inner**2) * vol)
        work += SIX_PI * float(np.sum(j_f * inner) * vol)
    return diss, drag, work


def dump_csv(fld, path):
    centers = fld.grid.cell_centers()
    uc = fld.cell_center_velocity()
    idx = np.stack(np.meshgrid(*[np.arange(s) for s in fld.grid.shape], indexing="ij"), axis=-1)
    table = np.concatenate([idx.reshape(-1, 3), centers.reshape(-1, 3), uc.reshape(-1, 3),
                            fld.p.reshape(-1, 1)], axis=1)
    header = "i,j,k,x,y,z,ux,uy,uz,p"
    fmt = ["%d"] * 3 + ["%.17g"] * 7
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def grid_metadata(fld):
    g = fld.grid
    return json.dumps({
        "shape": list(g.shape), "h": [float(v) for v in g.h],
        "box": {"lo": list(g.box.lo), "hi": list(g.box.hi)},
        "iterations": fld.iterations, "momentum_residual": fld.momentum_residual,
        "divergence_residual": fld.divergence_residual,
    }, indent=1)
