import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokes_homog import covering as cv
from stokes_homog.cloud import gen_periodic


def oracle_offsets(points, weights, lam, d, anchor=np.zeros(3)):
    """Corridor mass per offset from direct geometry and Fraction sums."""
    out = []
    for l in range(d):
        base = anchor + l * lam / d
        lo = base + lam * np.floor((points - base) / lam)
        gap = np.minimum(points - lo, lo + lam - points).min(axis=1)
        corridor = gap < lam / (d + 1)
        out.append(sum((Fraction(float(w)) for w in weights[corridor]), Fraction(0)))
    return out


def random_points(seed, n, w_kind="uniform"):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3))
    w = rng.random(n) if w_kind == "random" else np.ones(n)
    return cv.WeightedPoints(pts, w)


class TestMinimizer:
    @pytest.mark.parametrize("d", [2, 3, 4, 8])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_exhaustive_oracle(self, d, seed):
        wp = random_points(seed, 500, "random")
        lam = 0.17
        cov = cv.build_covering(wp, lam, d)
        masses = oracle_offsets(wp.points, wp.weights, lam, d)
        assert list(cov.corridor_mass_by_offset) == masses
        best = min(range(d), key=lambda k: (masses[k], k))
        assert cov.offset_index == best
        assert cov.corridor_mass_exact == masses[best]

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), d=st.integers(2, 9), lam=st.floats(0.02, 0.6))
    def test_six_over_d_bound(self, seed, d, lam):
        wp = random_points(seed, 200, "random")
        cov = cv.build_covering(wp, lam, d)
        assert cov.corridor_mass_exact <= Fraction(6, d) * cov.total_mass_exact
        assert all(c <= s for c, s in zip(cov.corridor_mass_by_offset, cov.shell_mass_by_offset))
        # every small-cube layer lies in the shell of two offsets per axis
        assert sum(cov.shell_mass_by_offset) <= 6 * cov.total_mass_exact

    def test_exact_total_mass(self):
        w = np.array([0.1, 0.2, 0.3, 1e-300, 5e-324])
        wp = cv.WeightedPoints(np.full((5, 3), 0.5), w)
        cov = cv.build_covering(wp, 0.3, 3)
        assert cov.total_mass_exact == sum(Fraction(float(x)) for x in w)

    def test_ties_pick_smallest_offset(self):
        wp = cv.WeightedPoints(np.zeros((0, 3)), np.zeros(0))
        assert cv.build_covering(wp, 0.5, 4).offset_index == 0


class TestExamples:
    def test_single_point(self):
        wp = cv.WeightedPoints([[0.5, 0.5, 0.5]], [1.0])
        cov = cv.build_covering(wp, 0.4, 4)
        assert cov.corridor_mass == 0.0
        assert sum(c.count for c in cov.cells.values()) == 1

    def test_grid_1000_d8(self):
        c = gen_periodic(10)
        wp = cv.WeightedPoints(c.centers, np.ones(c.n))
        cov = cv.build_covering(wp, 0.2, 8)
        assert cov.corridor_mass <= 750
        assert sum(c.count for c in cov.cells.values()) == 1000

    def test_from_cloud_weights(self):
        c = gen_periodic(2, velocity_field=(1.0, 2.0, 0.0))
        wp = cv.WeightedPoints.from_cloud(c)
        np.testing.assert_allclose(wp.weights, 6.0 / 8)

    def test_rejects_bad_input(self):
        wp = random_points(0, 5)
        with pytest.raises(ValueError):
            cv.build_covering(wp, 0.0, 3)
        with pytest.raises(ValueError):
            cv.build_covering(wp, 0.1, 1)
        with pytest.raises(ValueError):
            cv.WeightedPoints([[0, 0, 0]], [-1.0])


class TestCells:
    def test_half_open(self):
        wp = cv.WeightedPoints(np.zeros((0, 3)), np.zeros(0))
        cov = cv.build_covering(wp, 0.5, 2)
        assert cov.cell_of([0.0, 0.0, 0.0]) == (0, 0, 0)
        assert cov.cell_of([0.5, 0.25, 0.0]) == (1, 0, 0)
        assert cv.cell_of(cov, [0.49999, 0.0, -1e-9]) == (0, 0, -1)

    def test_cell_bounds_contain_members(self):
        wp = random_points(3, 400)
        cov = cv.build_covering(wp, 0.23, 3)
        for kappa, cell in cov.cells.items():
            lo, hi = cov.cell_bounds(kappa)
            p = wp.points[list(cell.indices)]
            assert np.all(p >= lo - 1e-12) and np.all(p < hi + 1e-12)
            np.testing.assert_allclose(cell.center, cov.cell_center(kappa))

    def test_counts_partition(self):
        wp = random_points(4, 777)
        cov = cv.build_covering(wp, 0.11, 5)
        idx = sorted(i for c in cov.cells.values() for i in c.indices)
        assert idx == list(range(777))

    def test_corridor_membership_matches_indices(self):
        wp = random_points(5, 300)
        cov = cv.build_covering(wp, 0.2, 4)
        flags = [cv.corridor_membership(cov, p) for p in wp.points]
        assert np.flatnonzero(flags).tolist() == cov.corridor_indices.tolist()
        assert all(cov.is_corridor(i) == f for i, f in enumerate(flags))

    def test_non_corridor_indices(self):
        wp = random_points(6, 300)
        cov = cv.build_covering(wp, 0.2, 4)
        kappa, cell = next(iter(cov.cells.items()))
        rest = cov.non_corridor_indices(kappa)
        assert set(rest) == set(cell.indices) - set(cov.corridor_indices.tolist())
        assert cov.non_corridor_indices((99, 99, 99)).size == 0

    def test_translation_equivariance(self):
        # dyadic data: shifting by lambda keeps every comparison exact
        rng = np.random.default_rng(7)
        pts = rng.integers(0, 2**10, (200, 3)) / 2**10
        w = np.ones(200)
        lam = 0.25
        a = cv.build_covering(cv.WeightedPoints(pts, w), lam, 4)
        b = cv.build_covering(cv.WeightedPoints(pts + lam, w), lam, 4)
        assert a.offset_index == b.offset_index
        assert a.corridor_indices.tolist() == b.corridor_indices.tolist()
        assert {tuple(np.add(k, 1)): c.indices for k, c in a.cells.items()} == \
            {k: c.indices for k, c in b.cells.items()}

    def test_json(self):
        cov = cv.build_covering(random_points(8, 50), 0.3, 3)
        doc = json.loads(cov.to_json())
        assert doc["d"] == 3 and doc["corridor_width"] == pytest.approx(0.075)
        assert sum(len(c["indices"]) for c in doc["cells"]) == 50
