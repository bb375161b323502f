"""Weak-form comparison between a particle cloud and its Brinkman limit.

For a divergence-free test field w the many-sphere side is
lhs = int grad u_s : grad w, with u_s the stokeslet superposition (strength
v_i at h_i, velocity extended by its value inside every ball). The limit
side is rhs = 6 pi int (j - rho u_bar) . w with u_bar the discrete Brinkman
solution for the binned density and flux.

Because u_s is H^1 and w has compact support, lhs equals the sum over the
spheres of the traction pairing with w, computed here by Gauss rules on
each sphere. The volume quadrature of -int u_s . lap w is kept as an
independent cross-check (it converges slowly: u_s has kinks on every
sphere).
"""

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import brinkman, cloud as cloud_mod, covering, quadrature
from .stokeslet import StokesletSum, traction_single

SIX_PI = 6.0 * np.pi
DEFAULT_DELTA = 4

REPORT_COLUMNS = ("n", "lambda", "d_min", "m_sup", "energy", "delta", "lhs", "rhs", "interior_sum",
                  "cell_avg_sum", "residual", "budget_p21_max", "budget_p41", "wall_time_s")


@dataclass(frozen=True)
class QuadConfig:
    sphere_order: int = 8
    annulus_order: int = 3
    cell_order: int = 8
    panels_per_scale: int = 6
    volume_order: int = 16
    volume_subdivisions: int = 2


def _check_delta(delta):
    if int(delta) != delta or delta < 2:
        raise ValueError("delta must be an integer >= 2")
    return int(delta)


def covering_for(cloud, lam, delta=DEFAULT_DELTA):
    """Covering with corridor width lambda/delta (d = delta - 1), anchored at the box corner."""
    delta = _check_delta(delta)
    if delta < 3:
        raise ValueError("delta must be >= 3 so that d = delta - 1 >= 2")
    return covering.build_covering(covering.WeightedPoints.from_cloud(cloud), lam, delta - 1,
                                   anchor=cloud.box.lo)


def annulus_rule(cov, kappa, delta, order=3):
    delta = _check_delta(delta)
    outer = 0.5 * cov.lam
    inner = (1.0 - 1.0 / delta) * outer
    return quadrature.gauss_cubic_annulus(cov.cell_center(kappa), inner, outer, order)


def cell_average(cloud, cov, kappa, delta, u_eval, order=3):
    """Mean of u_eval over the l-infinity annulus A(x_k, (1 - 1/delta) lambda/2, lambda/2)."""
    pts, wts = annulus_rule(cov, kappa, delta, order)
    vals = np.asarray(u_eval(pts), dtype=float)
    return wts @ vals / wts.sum()


def interior_drag_sum(cloud, cov, w, include_corridor=False):
    """(6 pi / N) sum of w(h_i) . v_i over the non-corridor particles (or all of them)."""
    if cloud.n == 0:
        return 0.0
    terms = np.sum(w(cloud.centers) * cloud.velocities, axis=1)
    if not include_corridor and len(cov.corridor_indices):
        terms[cov.corridor_indices] = 0.0
    return float(SIX_PI / cloud.n * np.sum(terms))


def _cell_weight_sums(cloud, cov, w):
    wh = w(cloud.centers)
    out = {}
    for kappa in cov.cells:
        idx = cov.non_corridor_indices(kappa)
        out[kappa] = wh[idx].sum(axis=0) if len(idx) else np.zeros(3)
    return out


def sigma_field(cloud, cov, w, delta):
    """Per-cell density of the binned test field on the cell's annulus.

    sigma_k = (1 - (1 - 1/delta)^3)^-1 / (N lambda^3) * sum of w(h_i) over the
    non-corridor particles of cell k; integrating sigma_k over the annulus
    gives (1/N) times that sum.
    """
    delta = _check_delta(delta)
    factor = 1.0 / ((1.0 - (1.0 - 1.0 / delta) ** 3) * cloud.n * cov.lam**3)
    return {k: factor * s for k, s in _cell_weight_sums(cloud, cov, w).items()}


def sigma_l1(cov, sigma, delta):
    vol = cov.lam**3 * (1.0 - (1.0 - 1.0 / delta) ** 3)
    return float(sum(np.linalg.norm(s) for s in sigma.values()) * vol)


def cell_avg_sum(cloud, cov, w, delta, u_eval, order=3):
    """6 pi int sigma . u_eval, i.e. (6 pi / N) sum_k sum_i w(h_i) . (average of u_eval on annulus k)."""
    total = 0.0
    for kappa, s in _cell_weight_sums(cloud, cov, w).items():
        if not np.any(s):
            continue
        total += float(s @ cell_average(cloud, cov, kappa, delta, u_eval, order))
    return SIX_PI / cloud.n * total


def lhs_surface(cloud, w, order=8):
    """Sum over spheres of the traction pairing with w (the by-parts form of the lhs)."""
    a = float(cloud.n)
    pts, nout, qw = quadrature.gauss_sphere(1.0 / a, order)
    lo, hi = w.support_box()
    total = 0.0
    for h, v in zip(cloud.centers, cloud.velocities):
        if not np.any(v) or np.any(h + 1.0 / a < lo) or np.any(h - 1.0 / a > hi):
            continue
        t = traction_single(a, v, pts, -nout)
        total += float(qw @ np.sum(t * w(pts + h), axis=1))
    return total


def lhs_volume(cloud, w, order=16, subdivisions=2):
    """-int u_s . lap w by tensor Gauss quadrature over the support of w."""
    pts, qw = w.quadrature(order, subdivisions)
    keep = np.sum(((pts - np.asarray(w.center)) / w.scale) ** 2, axis=1) < 1.0
    pts, qw = pts[keep], qw[keep]
    u = StokesletSum.from_cloud(cloud).velocity(pts)
    return float(-qw @ np.sum(u * w.laplacian(pts), axis=1))


def brinkman_pairing(fields, fld, w, order=8, panels_per_scale=6):
    """6 pi int (j - rho u_bar) . w over the grid cells meeting supp w.

    Each cell is split into Gauss panels no wider than scale/panels_per_scale,
    since j and rho jump across cell faces but w varies on its own scale.
    """
    grid = fields.grid
    lo_s, hi_s = w.support_box()
    h = grid.h
    last = np.asarray(grid.shape) - 1
    i_lo = np.clip(np.floor((lo_s - grid.lo) / h).astype(int), 0, last)
    i_hi = np.clip(np.floor((hi_s - grid.lo) / h).astype(int), 0, last)
    panels = int(np.ceil(h.max() * panels_per_scale / w.scale))
    ref, ref_w = quadrature.gauss_box(np.zeros(3), h, order, panels)
    total = 0.0
    for idx in np.ndindex(*(i_hi - i_lo + 1)):
        cell = tuple(np.asarray(idx) + i_lo)
        pts = grid.lo + np.asarray(cell) * h + ref
        wv = w(pts)
        if not np.any(wv):
            continue
        integrand = fields.j[cell] - fields.rho[cell] * fld.eval(pts)
        total += float(ref_w @ np.sum(integrand * wv, axis=1))
    return SIX_PI * total


def budget_p21(m, n, d_m, w_norm):
    """sqrt(M/N) (1/N + sqrt(M/(N d_m))) ||w||, unit constant."""
    if m == 0:
        return 0.0
    if not (n > 0 and d_m > 0 and w_norm >= 0):
        raise ValueError("n and d_m must be positive")
    return float(w_norm * np.sqrt(m / n) * (1.0 / n + np.sqrt(m / (n * d_m))))


def budget_p41(n, lam, d_min, delta, m_inf, energy, w_norm):
    """(1 + E^2) M_inf (1/d + d l^2 + d^(1/3) N^(2/3) l^4 + N^(2/3) l^5 / (d^(2/3) d_min) + l^3/d_min)^(1/2) ||w||."""
    if delta < 4:
        raise ValueError("delta must be >= 4")
    n23 = n ** (2.0 / 3.0)
    bracket = (1.0 / delta + delta * lam**2 + delta ** (1.0 / 3.0) * n23 * lam**4
               + n23 * lam**5 / (delta ** (2.0 / 3.0) * d_min) + lam**3 / d_min)
    return float((1.0 + energy**2) * m_inf * np.sqrt(bracket) * w_norm)


def cell_min_distance(cloud, cov, kappa, tree=None):
    """min over non-corridor i in cell k of dist(h_i, cell boundary) and the nearest other centre."""
    idx = cov.non_corridor_indices(kappa)
    if len(idx) == 0:
        return np.inf
    lo, hi = cov.cell_bounds(kappa)
    pts = cloud.centers[idx]
    face = np.minimum(pts - lo, hi - pts).min()
    if cloud.n > 1:
        if tree is None:
            from scipy.spatial import cKDTree
            tree = cKDTree(cloud.centers)
        nn = tree.query(pts, k=2)[0][:, 1].min()
    else:
        nn = np.inf
    return float(min(face, nn))


def budget_p21_max(cloud, cov, w_norm):
    from scipy.spatial import cKDTree
    tree = cKDTree(cloud.centers) if cloud.n > 1 else None
    best = 0.0
    for kappa in cov.cells:
        m = len(cov.non_corridor_indices(kappa))
        if m == 0:
            continue
        best = max(best, budget_p21(m, cloud.n, cell_min_distance(cloud, cov, kappa, tree), w_norm))
    return best


def m_inf(cloud, cov):
    if not cov.cells:
        return 0.0
    return max(c.count for c in cov.cells.values()) / (cloud.n * cov.lam**3)


def default_grid(cloud):
    k = max(4, int(round(cloud.n ** (1.0 / 3.0))))
    return brinkman.MacGrid(cloud.box, (k, k, k))


@dataclass(frozen=True)
class WeakFormReport:
    n: int
    lam: float
    d_min: float
    m_sup: int
    energy: float
    delta: int
    lhs: float
    rhs: float
    interior_sum: float
    cell_avg_sum: float
    residual: float
    budget_p21_max: float
    budget_p41: float
    wall_time_s: float
    lhs_volume: float = float("nan")
    corridor_mass: float = 0.0
    below_n_delta: bool = False
    surrogate: str = "first-order stokeslet superposition"
    extras: dict = field(default_factory=dict)

    def row(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return {k: d[k] for k in REPORT_COLUMNS}


def weak_form_experiment(cloud, w, delta=DEFAULT_DELTA, grid=None, quad_cfg=QuadConfig(), lam=None,
                         tol=1e-8, with_volume_check=False, deposition="ngp"):
    if not w.supported_in(cloud.box):
        raise ValueError("test field must be supported inside the box")
    start = time.perf_counter()
    delta = _check_delta(delta)
    report = cloud_mod.dilution_report(cloud, lam=lam)
    lam = report.lam
    cov = covering_for(cloud, lam, delta)
    ssum = StokesletSum.from_cloud(cloud)

    lhs = lhs_surface(cloud, w, quad_cfg.sphere_order)
    interior = interior_drag_sum(cloud, cov, w)
    avg_sum = cell_avg_sum(cloud, cov, w, delta, ssum.velocity, quad_cfg.annulus_order)

    grid = default_grid(cloud) if grid is None else grid
    fields = brinkman.bin_empirical(cloud, grid, deposition)
    fld = brinkman.solve_brinkman(fields, grid, tol=tol)
    rhs = brinkman_pairing(fields, fld, w, quad_cfg.cell_order, quad_cfg.panels_per_scale)

    w_norm = w.w1inf_norm
    p41 = budget_p41(cloud.n, lam, report.d_min, max(delta, 4), m_inf(cloud, cov), report.energy, w_norm)
    p21 = budget_p21_max(cloud, cov, w_norm)
    vol = lhs_volume(cloud, w, quad_cfg.volume_order, quad_cfg.volume_subdivisions) if with_volume_check \
        else float("nan")
    return WeakFormReport(
        n=cloud.n, lam=lam, d_min=report.d_min, m_sup=report.m_sup, energy=report.energy, delta=delta,
        lhs=lhs, rhs=rhs, interior_sum=interior, cell_avg_sum=avg_sum, residual=abs(lhs - rhs),
        budget_p21_max=p21, budget_p41=p41, wall_time_s=time.perf_counter() - start,
        lhs_volume=vol, corridor_mass=cov.corridor_mass, below_n_delta=bool(lam / delta < 4.0 / cloud.n),
        extras={"brinkman_iterations": fld.iterations, "grid": list(grid.shape)},
    )


def default_test_field():
    """Test field used by the N-ladder experiment (see the project notes for the placement)."""
    from .testfield import TestField
    return TestField((0.5, 0.525, 0.5), 0.25, (0.0, 0.0, 1.0))


def periodic_ladder(n_per_axis=(4, 6, 8, 10), w=None, delta=DEFAULT_DELTA, velocity=(1.0, 0.0, 0.0), **kwargs):
    w = default_test_field() if w is None else w
    reports = []
    for k in n_per_axis:
        c = cloud_mod.gen_periodic(k, velocity_field=velocity)
        reports.append(weak_form_experiment(c, w, delta, grid=brinkman.MacGrid(c.box, (k, k, k)), **kwargs))
    return reports


def write_report_csv(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
