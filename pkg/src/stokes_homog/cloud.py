"""Particle configurations: N spheres of radius 1/N in an axis-aligned box.

Holds the geometric diagnostics (minimal distance, concentration count,
window size) and the generators for the periodic, random, pair and
cluster families.
"""

from dataclasses import dataclass, field
from enum import Enum
from itertools import product

import numpy as np
from scipy.spatial import cKDTree

from . import rng

_BALL_RTOL = 1e-9


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in self.lo)
        hi = tuple(float(x) for x in self.hi)
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"invalid box {lo} -> {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unit(cls):
        return cls((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))

    @property
    def widths(self):
        return np.subtract(self.hi, self.lo)

    @property
    def volume(self):
        return float(np.prod(self.widths))

    @property
    def center(self):
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def boundary_distance(self, x):
        """Distance from points inside the box to its boundary (smallest face gap)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        gaps = np.concatenate([x - np.asarray(self.lo), np.asarray(self.hi) - x], axis=1)
        return gaps.min(axis=1)

    def contains(self, x, strict=True):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        if strict:
            return np.all((x > lo) & (x < hi), axis=1)
        return np.all((x >= lo) & (x <= hi), axis=1)


@dataclass(frozen=True)
class ParticleCloud:
    """Centres h_i, prescribed velocities v_i and the common radius 1/N."""

    centers: np.ndarray
    velocities: np.ndarray
    box: Box = field(default_factory=Box.unit)

    def __post_init__(self):
        c = np.array(self.centers, dtype=float).reshape(-1, 3)
        v = np.array(self.velocities, dtype=float).reshape(-1, 3)
        if c.shape != v.shape:
            raise ValueError("centers and velocities must have the same length")
        c.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "velocities", v)

    @property
    def n(self):
        return len(self.centers)

    @property
    def radius(self):
        return 1.0 / self.n

    def with_velocities(self, velocities):
        return ParticleCloud(self.centers, velocities, self.box)


@dataclass(frozen=True)
class Violation:
    kind: str  # "pair" or "boundary"
    i: int
    j: int = -1
    distance: float = 0.0


_CONTACT_RTOL = 1e-12


def validate_a0(cloud):
    """List the pairs of closed balls that meet and the balls not strictly inside the box.

    An empty list means every ball B(h_i, 1/N) is compactly contained in the
    box and the closed balls are pairwise disjoint.
    """
    out = []
    n = cloud.n
    if n == 0:
        return out
    r = cloud.radius
    # contact is decided up to rounding of constructed coordinates
    touch = 1.0 + _CONTACT_RTOL
    bd = cloud.box.boundary_distance(cloud.centers)
    for i in np.flatnonzero(bd <= r * touch):
        out.append(Violation("boundary", int(i), -1, float(bd[i])))
    if n > 1:
        tree = cKDTree(cloud.centers)
        pairs = tree.query_pairs(2.0 * r * (1.0 + 1e-9), output_type="ndarray")
        if len(pairs):
            d = np.linalg.norm(cloud.centers[pairs[:, 0]] - cloud.centers[pairs[:, 1]], axis=1)
            hit = d <= 2.0 * r * touch
            for (i, j), dij in zip(pairs[hit], d[hit]):
                out.append(Violation("pair", int(min(i, j)), int(max(i, j)), float(dij)))
    out.sort(key=lambda v: (v.kind, v.i, v.j))
    return out


def nearest_neighbor_distances(points):
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return np.full(len(points), np.inf)
    d, _ = cKDTree(points).query(points, k=2)
    return d[:, 1]


def d_min(cloud):
    """min_i min(dist(h_i, boundary), min_{j != i} |h_i - h_j|)."""
    if cloud.n == 0:
        raise ValueError("empty configuration")
    bd = cloud.box.boundary_distance(cloud.centers).min()
    return float(min(bd, nearest_neighbor_distances(cloud.centers).min()))


@dataclass(frozen=True)
class MSupBounds:
    """Bracket for sup_x #{i : h_i in closed B(x, lambda)}."""

    lower: int
    upper: int
    argmax: tuple
    source: str  # candidate family that realised the lower bound
    midpoints: str  # "all", "nearest-k" or "none"


def m_sup_bounds(cloud, lam, grid_points_per_axis=0, max_pairs=200_000, k_nearest=16):
    """Certified lower bound and counting upper bound on the concentration count.

    Lower bound: maximum count over the centres, the midpoints of pairs at
    distance <= 2 lambda (all of them when there are at most ``max_pairs``,
    otherwise those with the ``k_nearest`` nearest neighbours), and an
    optional uniform grid over the box. Upper bound: the largest number of
    centres within 2 lambda of a single centre.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    n = cloud.n
    if n == 0:
        return MSupBounds(0, 0, tuple(cloud.box.center), "empty", "none")
    pts = cloud.centers
    tree = cKDTree(pts)
    rad = lam * (1.0 + _BALL_RTOL)

    upper_counts = tree.query_ball_point(pts, 2.0 * rad, return_length=True)
    upper = int(upper_counts.max())

    best, best_x, source = 0, tuple(pts[0]), "centers"

    def consider(cands, label):
        nonlocal best, best_x, source
        if len(cands) == 0:
            return
        counts = tree.query_ball_point(cands, rad, return_length=True)
        k = int(np.argmax(counts))
        if counts[k] > best:
            best, best_x, source = int(counts[k]), tuple(float(c) for c in cands[k]), label

    consider(pts, "centers")

    n_pairs = int((upper_counts.sum() - n) // 2)
    if n_pairs == 0:
        mode = "none"
    elif n_pairs <= max_pairs:
        pairs = tree.query_pairs(2.0 * rad, output_type="ndarray")
        for start in range(0, len(pairs), 100_000):
            p = pairs[start:start + 100_000]
            consider(0.5 * (pts[p[:, 0]] + pts[p[:, 1]]), "midpoints")
        mode = "all"
    else:
        k = min(k_nearest + 1, n)
        dist, idx = tree.query(pts, k=k)
        mids = 0.5 * (pts[:, None, :] + pts[idx[:, 1:]])
        ok = dist[:, 1:] <= 2.0 * rad
        consider(mids[ok], "midpoints")
        mode = "nearest-k"

    if grid_points_per_axis > 0:
        axes = [np.linspace(lo, hi, grid_points_per_axis) for lo, hi in zip(cloud.box.lo, cloud.box.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        consider(grid, "grid")

    return MSupBounds(best, max(upper, best), best_x, source, mode)


def m_sup(cloud, lam, **kwargs):
    """Lower bound on M (see :func:`m_sup_bounds`)."""
    return m_sup_bounds(cloud, lam, **kwargs).lower


def lambda_select(cloud, dmin=None):
    """Window size (d_min / N^(2/3))^(1/5)."""
    dm = d_min(cloud) if dmin is None else dmin
    if not dm > 0:
        raise ValueError("degenerate configuration")
    return float((dm / cloud.n ** (2.0 / 3.0)) ** 0.2)


class Verdict(str, Enum):
    BRINKMAN = "Brinkman-compatible"
    A4 = "A4-violated"
    A5 = "A5-violated"
    A0 = "A0-violated"


@dataclass(frozen=True)
class VerdictThresholds:
    """Finite-N cutoffs standing in for the asymptotic dilution conditions."""

    a4_lower_min: float = 2.0
    a4_upper_max: float = 10.0
    a5_max: float = 10.0


def verdict_from_ratios(ratio_a4_lower, ratio_a4_upper, ratio_a5, thresholds=VerdictThresholds(), a0_ok=True):
    if not a0_ok:
        return Verdict.A0
    if ratio_a4_lower < thresholds.a4_lower_min or ratio_a4_upper > thresholds.a4_upper_max:
        return Verdict.A4
    if ratio_a5 > thresholds.a5_max:
        return Verdict.A5
    return Verdict.BRINKMAN


@dataclass(frozen=True)
class DilutionReport:
    n: int
    d_min: float
    lam: float
    m_sup: int
    m_sup_upper: int
    energy: float
    ratio_a4_lower: float
    ratio_a4_upper: float
    ratio_a5: float
    n_dmin: float
    a0_violations: int
    verdict: Verdict

    @staticmethod
    def ratios(n, dmin, lam, msup):
        return {
            "ratio_a4_lower": dmin / lam**3,
            "ratio_a4_upper": n ** (2.0 / 3.0) * lam**5 / dmin,
            "ratio_a5": msup / (n * lam**3),
            "n_dmin": n * dmin,
        }

    def as_dict(self):
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["lambda"] = out.pop("lam")
        out["verdict"] = self.verdict.value
        return out


def energy(cloud):
    """sqrt((1/N) sum |v_i|^2)."""
    if cloud.n == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(cloud.velocities**2, axis=1))))


def dilution_report(cloud, lam=None, thresholds=VerdictThresholds(), **msup_kwargs):
    dm = d_min(cloud)
    if lam is None:
        lam = lambda_select(cloud, dm)
    elif not lam > 0:
        raise ValueError("lambda must be positive")
    bounds = m_sup_bounds(cloud, lam, **msup_kwargs)
    ratios = DilutionReport.ratios(cloud.n, dm, lam, bounds.lower) if dm > 0 else {
        "ratio_a4_lower": 0.0, "ratio_a4_upper": np.inf,
        "ratio_a5": bounds.lower / (cloud.n * lam**3), "n_dmin": 0.0,
    }
    violations = validate_a0(cloud)
    verdict = verdict_from_ratios(ratios["ratio_a4_lower"], ratios["ratio_a4_upper"], ratios["ratio_a5"],
                                  thresholds, a0_ok=not violations)
    return DilutionReport(
        n=cloud.n, d_min=dm, lam=float(lam), m_sup=bounds.lower, m_sup_upper=bounds.upper,
        energy=energy(cloud), a0_violations=len(violations), verdict=verdict, **ratios,
    )


# --- generators ----------------------------------------------------------

def _sample_velocities(velocity_field, centers):
    if velocity_field is None:
        return np.zeros_like(centers)
    if callable(velocity_field):
        v = np.asarray(velocity_field(centers), dtype=float)
        return np.broadcast_to(v, centers.shape).copy()
    return np.broadcast_to(np.asarray(velocity_field, dtype=float), centers.shape).copy()


def gen_periodic(n_per_axis, velocity_field=None, box=None):
    """n_per_axis^3 centres on the offset regular grid of the box."""
    if n_per_axis < 1:
        raise ValueError("n_per_axis must be >= 1")
    box = Box.unit() if box is None else box
    axes = [lo + (np.arange(n_per_axis) + 0.5) * (hi - lo) / n_per_axis for lo, hi in zip(box.lo, box.hi)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return ParticleCloud(centers, _sample_velocities(velocity_field, centers), box)


class PackingInfeasible(RuntimeError):
    pass


# random sequential addition of hard spheres jams near 38% volume fraction
PACKING_THRESHOLD = 0.3


def gen_random_dilute(n, d_target, box=None, seed=0, velocity_field=None, max_attempts=None):
    """Rejection-sampled centres with pairwise and boundary distance >= d_target."""
    box = Box.unit() if box is None else box
    if n < 1 or not d_target > 0:
        raise ValueError("need n >= 1 and d_target > 0")
    inner = box.widths - 2.0 * d_target
    if np.any(inner <= 0):
        raise PackingInfeasible("packing infeasible")
    fraction = n * (np.pi / 6.0) * d_target**3 / float(np.prod(box.widths + d_target))
    if fraction > PACKING_THRESHOLD:
        raise PackingInfeasible("packing infeasible")
    if max_attempts is None:
        max_attempts = 1000 * n + 10_000
    gen = rng.stream(seed, "gen_random_dilute", n)
    lo = np.asarray(box.lo) + d_target
    cell = d_target
    buckets = {}
    accepted = []
    attempts = 0
    batch = 4096
    while len(accepted) < n:
        cand = lo + gen.random((batch, 3)) * inner
        for x in cand:
            attempts += 1
            if attempts > max_attempts:
                raise PackingInfeasible("packing infeasible")
            key = tuple(np.floor(x / cell).astype(int))
            ok = True
            for off in product((-1, 0, 1), repeat=3):
                for j in buckets.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]), ()):
                    if np.sum((accepted[j] - x) ** 2) < d_target**2:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                buckets.setdefault(key, []).append(len(accepted))
                accepted.append(x)
                if len(accepted) == n:
                    break
    centers = np.array(accepted)
    return ParticleCloud(centers, _sample_velocities(velocity_field, centers), box)


def _icbrt(m):
    k = int(round(m ** (1.0 / 3.0)))
    while k**3 > m:
        k -= 1
    while (k + 1) ** 3 <= m:
        k += 1
    return k


def _random_unit_vectors(gen, m):
    v = gen.normal(size=(m, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def gen_counterexample_pairs(n, h, seed=0, axis=None, velocity_field=None):
    """Two centres per cell, diametrically opposite on the sphere of radius (1+h)/n.

    The unit cube is split into n/2 cells of width (2/n)^(1/3). When n/2 is
    not a perfect cube, the cube is split into k^3 cells with k the next
    integer cube root and the first n/2 cells (lexicographic) are used.
    ``axis=None`` draws one seeded random axis per cell; a fixed vector
    gives the same axis everywhere.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even integer")
    if h < 0:
        raise ValueError("h must be nonnegative")
    m = n // 2
    k = _icbrt(m)
    if k**3 < m:
        k += 1
    width = 1.0 / k
    idx = np.array(list(product(range(k), repeat=3))[:m])
    cell_centers = (idx + 0.5) * width
    if axis is None:
        axes = _random_unit_vectors(rng.stream(seed, "pairs", n), m)
    else:
        a = np.asarray(axis, dtype=float)
        axes = np.broadcast_to(a / np.linalg.norm(a), (m, 3))
    offset = (1.0 + h) / n
    centers = np.empty((n, 3))
    centers[0::2] = cell_centers + offset * axes
    centers[1::2] = cell_centers - offset * axes
    return ParticleCloud(centers, _sample_velocities(velocity_field, centers), Box.unit())


DEFAULT_CLUSTER_BOX = Box((-0.5, -0.5, -0.5), (1.5, 1.5, 1.5))


def cluster_sites(p, d_m):
    """The p sites closest to the origin on the centred grid of step 2 d_m."""
    ks = _icbrt(p)
    if ks**3 < p:
        ks += 1
    line = (np.arange(ks) - 0.5 * (ks - 1)) * 2.0 * d_m
    sites = np.stack(np.meshgrid(line, line, line, indexing="ij"), axis=-1).reshape(-1, 3)
    order = np.lexsort((sites[:, 2], sites[:, 1], sites[:, 0], np.round(np.sum(sites**2, axis=1) / d_m**2, 9)))
    return sites[order[:p]], ks


def gen_counterexample_clusters(n, p, d_m, box=None, velocity_field=None):
    """floor(n/p) cells of width (p/n)^(1/3), each holding p centres on a grid of step 2 d_m.

    Cells are those of the lattice [k w, (k+1) w)^3. Cells inside the unit
    cube come first (lexicographic), then cells inside the box ordered by
    distance to the unit-cube centre. The n - floor(n/p) p remaining centres
    go to one extra cell.
    """
    box = DEFAULT_CLUSTER_BOX if box is None else box
    if not (1 <= p <= n):
        raise ValueError("need 1 <= p <= n")
    if not d_m > 0:
        raise ValueError("d_m must be positive")
    if np.any(np.asarray(box.lo) > 0.0) or np.any(np.asarray(box.hi) < 1.0):
        raise ValueError("box must contain the unit cube")
    width = (p / n) ** (1.0 / 3.0)
    _, ks = cluster_sites(p, d_m)
    extent = (ks - 1) * 2.0 * d_m
    if not extent < width:
        raise ValueError(f"infeasible cluster: grid extent (ceil(p^(1/3)) - 1) * 2 d_m = {extent:.6g} "
                         f">= cell width (p/n)^(1/3) = {width:.6g}")
    n_full, rem = divmod(n, p)
    n_cells = n_full + (1 if rem else 0)

    kmin = np.floor(np.asarray(box.lo) / width).astype(int)
    kmax = np.ceil(np.asarray(box.hi) / width).astype(int)
    ranges = [range(a, b) for a, b in zip(kmin, kmax)]
    idx = np.array(list(product(*ranges)))
    lo = idx * width
    hi = lo + width
    eps = 1e-12
    in_box = np.all(lo >= np.asarray(box.lo) - eps, axis=1) & np.all(hi <= np.asarray(box.hi) + eps, axis=1)
    in_unit = np.all(lo >= -eps, axis=1) & np.all(hi <= 1.0 + eps, axis=1)
    centers_k = lo + 0.5 * width
    dist = np.linalg.norm(centers_k - 0.5, axis=1)
    first = np.flatnonzero(in_unit)
    rest = np.flatnonzero(in_box & ~in_unit)
    rest = rest[np.lexsort((idx[rest, 2], idx[rest, 1], idx[rest, 0], np.round(dist[rest], 12)))]
    chosen = np.concatenate([first, rest])
    if len(chosen) < n_cells:
        raise ValueError(f"box holds only {len(chosen)} cells of width {width:.6g}, need {n_cells}")
    chosen = chosen[:n_cells]

    full_sites, _ = cluster_sites(p, d_m)
    blocks = [centers_k[c] + full_sites for c in chosen[:n_full]]
    if rem:
        rem_sites, _ = cluster_sites(rem, d_m)
        blocks.append(centers_k[chosen[n_full]] + rem_sites)
    centers = np.concatenate(blocks)
    return ParticleCloud(centers, _sample_velocities(velocity_field, centers), box)


def natural_lambda_pairs(n):
    """Cell width (2/n)^(1/3) of the pair construction."""
    return (2.0 / n) ** (1.0 / 3.0)


def natural_lambda_clusters(n, p):
    """Cell width (p/n)^(1/3) of the cluster construction."""
    return (p / n) ** (1.0 / 3.0)


# --- serialization -------------------------------------------------------

def _fmt(x):
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("non-finite value cannot be serialized")
    return format(x, ".17g")


def _fmt_vec(v):
    return "[" + ", ".join(_fmt(c) for c in v) + "]"


def _fmt_rows(rows):
    if len(rows) == 0:
        return "[]"
    return "[\n    " + ",\n    ".join(_fmt_vec(r) for r in rows) + "\n  ]"


def to_json(cloud):
    """Canonical text: fixed key order, 17 significant digits, one point per line."""
    return (
        "{\n"
        f'  "n": {cloud.n},\n'
        f'  "radius": {_fmt(cloud.radius) if cloud.n else "null"},\n'
        f'  "box": {{"lo": {_fmt_vec(cloud.box.lo)}, "hi": {_fmt_vec(cloud.box.hi)}}},\n'
        f'  "centers": {_fmt_rows(cloud.centers)},\n'
        f'  "velocities": {_fmt_rows(cloud.velocities)}\n'
        "}\n"
    )


def from_json(text):
    import json

    doc = json.loads(text)
    try:
        box = Box(doc["box"]["lo"], doc["box"]["hi"])
        centers = np.array(doc["centers"], dtype=float).reshape(-1, 3)
        velocities = np.array(doc["velocities"], dtype=float).reshape(-1, 3)
        n = int(doc["n"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed cloud file: {exc}") from exc
    if n != len(centers):
        raise ValueError(f"n = {n} does not match {len(centers)} centers")
    if n and doc.get("radius") is not None and abs(float(doc["radius"]) - 1.0 / n) > 1e-15:
        raise ValueError("radius must equal 1/n")
    return ParticleCloud(centers, velocities, box)


def save(cloud, path):
    with open(path, "w") as fh:
        fh.write(to_json(cloud))


def load(path):
    with open(path) as fh:
        return from_json(fh.read())
