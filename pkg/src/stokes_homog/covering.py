"""Measure-adapted cube coverings.

Space is cut into small cubes of width lambda/d anchored at ``anchor``. For
each diagonal offset l in {0, ..., d-1} the large cubes (width lambda) are
unions of d^3 small cubes with corners at anchor + (lambda/d)(d K + l).
A small cube touching a large-cube face belongs to the "shell" of that
offset; each small-cube layer is in the shell of exactly two offsets per
axis, so the shell masses sum to at most 6 times the total and some offset
carries at most 6/d of it. The corridor (l-infinity distance to the faces
below lambda/(d+1)) lies inside the shell, so the same bound applies to it.

Masses are summed exactly: every float weight is an integer multiple of
2^-1074, so integer arithmetic on the scaled mantissas gives exact sums.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

_SCALE_EXP = 1074


@dataclass(frozen=True)
class WeightedPoints:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 3)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(p) != len(w):
            raise ValueError("points and weights must have the same length")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_cloud(cls, cloud):
        """Masses (1 + |v_i|^2)/N."""
        w = (1.0 + np.sum(cloud.velocities**2, axis=1)) / max(cloud.n, 1)
        return cls(cloud.centers, w)


def _exact_ints(weights):
    mant, expo = np.frexp(np.asarray(weights, dtype=float))
    mant = (mant * 2.0**53).astype(np.int64).tolist()
    shift = (expo - 53 + _SCALE_EXP).tolist()
    return [m << s if s >= 0 else int(Fraction(float(x)) * (1 << _SCALE_EXP))
            for m, s, x in zip(mant, shift, weights)]


def _exact_sum(ints, mask):
    return sum(ints[i] for i in np.flatnonzero(mask))


def _to_fraction(total):
    return Fraction(total, 1 << _SCALE_EXP)


@dataclass(frozen=True)
class Cell:
    kappa: tuple
    center: tuple
    indices: tuple

    @property
    def count(self):
        return len(self.indices)


@dataclass(frozen=True)
class CubeCovering:
    lam: float
    d: int
    offset_index: int
    anchor: tuple
    cells: dict
    corridor_indices: np.ndarray
    corridor_mass_exact: Fraction
    total_mass_exact: Fraction
    corridor_mass_by_offset: tuple
    shell_mass_by_offset: tuple
    assignment: np.ndarray = field(repr=False)

    @property
    def corridor_width(self):
        return self.lam / (self.d + 1)

    @property
    def corridor_mass(self):
        return float(self.corridor_mass_exact)

    @property
    def total_mass(self):
        return float(self.total_mass_exact)

    @property
    def delta(self):
        return self.d + 1

    def _small_index(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.floor((x - np.asarray(self.anchor)) / (self.lam / self.d)).astype(np.int64)

    def cell_of(self, x):
        """Integer triple of the half-open large cube containing x."""
        k = (self._small_index(x) - self.offset_index) // self.d
        return tuple(int(v) for v in k[0])

    def cell_bounds(self, kappa):
        lo = np.asarray(self.anchor) + (self.lam / self.d) * (self.d * np.asarray(kappa) + self.offset_index)
        return lo, lo + self.lam

    def cell_center(self, kappa):
        lo, hi = self.cell_bounds(kappa)
        return 0.5 * (lo + hi)

    def corridor_membership(self, x):
        """True iff the l-infinity distance from x to the cell faces is below lambda/(d+1)."""
        return bool(_corridor_mask(np.atleast_2d(np.asarray(x, dtype=float)), self.anchor, self.lam,
                                   self.d, self.offset_index)[0][0])

    def is_corridor(self, i):
        return bool(np.isin(i, self.corridor_indices))

    def non_corridor_indices(self, kappa):
        cell = self.cells.get(tuple(kappa))
        if cell is None:
            return np.array([], dtype=int)
        idx = np.asarray(cell.indices, dtype=int)
        return idx[~np.isin(idx, self.corridor_indices)]

    def to_json(self):
        doc = {
            "lambda": self.lam,
            "d": self.d,
            "offset_index": self.offset_index,
            "anchor": list(self.anchor),
            "corridor_width": self.corridor_width,
            "corridor_mass": self.corridor_mass,
            "total_mass": self.total_mass,
            "cells": [
                {"kappa": list(c.kappa), "center": list(c.center), "indices": list(c.indices)}
                for _, c in sorted(self.cells.items())
            ],
            "corridor_indices": [int(i) for i in self.corridor_indices],
        }
        return json.dumps(doc, indent=1)


def _corridor_mask(points, anchor, lam, d, offset):
    """Shell and corridor masks plus large-cube indices for one offset."""
    small = lam / d
    m = np.floor((points - np.asarray(anchor)) / small).astype(np.int64)
    rel = m - offset
    pos = rel % d
    kappa = rel // d
    shell = np.any((pos == 0) | (pos == d - 1), axis=1)
    lo = np.asarray(anchor) + small * (d * kappa + offset)
    gap = np.minimum(points - lo, lo + lam - points).min(axis=1)
    corridor = shell & (gap < lam / (d + 1))
    return corridor, shell, kappa


def build_covering(pts, lam, d, anchor=(0.0, 0.0, 0.0)):
    """Pick the diagonal offset with least corridor mass (ties: smallest offset)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if int(d) != d or d < 2:
        raise ValueError("d must be an integer >= 2")
    d = int(d)
    anchor = tuple(float(a) for a in anchor)
    points, weights = pts.points, pts.weights
    ints = _exact_ints(weights)
    total = sum(ints)

    corridor_sums, shell_sums, masks = [], [], []
    for offset in range(d):
        corridor, shell, kappa = _corridor_mask(points, anchor, lam, d, offset)
        corridor_sums.append(_exact_sum(ints, corridor))
        shell_sums.append(_exact_sum(ints, shell))
        masks.append((corridor, kappa))
    best = min(range(d), key=lambda k: (corridor_sums[k], k))
    corridor_mass = _to_fraction(corridor_sums[best])
    total_mass = _to_fraction(total)
    if corridor_mass > Fraction(6, d) * total_mass:
        raise RuntimeError("corridor mass exceeds the 6/d bound")

    corridor, kappa = masks[best]
    cells = {}
    assignment = np.empty(len(points), dtype=np.int64)
    if len(points):
        keys, inverse = np.unique(kappa, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        assignment[:] = inverse
        order = np.argsort(inverse, kind="stable")
        splits = np.cumsum(np.bincount(inverse, minlength=len(keys)))[:-1]
        small = lam / d
        for key, idx in zip(keys, np.split(order, splits)):
            kap = tuple(int(v) for v in key)
            lo = np.asarray(anchor) + small * (d * key + best)
            cells[kap] = Cell(kap, tuple(float(c) for c in lo + 0.5 * lam), tuple(int(i) for i in idx))
    return CubeCovering(
        lam=float(lam), d=d, offset_index=best, anchor=anchor, cells=cells,
        corridor_indices=np.flatnonzero(corridor),
        corridor_mass_exact=corridor_mass, total_mass_exact=total_mass,
        corridor_mass_by_offset=tuple(_to_fraction(s) for s in corridor_sums),
        shell_mass_by_offset=tuple(_to_fraction(s) for s in shell_sums),
        assignment=assignment,
    )


def cell_of(cov, x):
    return cov.cell_of(x)


def corridor_membership(cov, x):
    return cov.corridor_membership(x)
