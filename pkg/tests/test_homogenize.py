import csv

import numpy as np
import pytest

from stokes_homog import homogenize as hg
from stokes_homog.cloud import Box, ParticleCloud, gen_periodic, gen_random_dilute, lambda_select
from stokes_homog.stokeslet import StokesletSum, cube_pairing, sphere_pairing, u_single, volume_pairing
from stokes_homog.testfield import TestField

E1 = np.array([1.0, 0.0, 0.0])


def const(vec):
    vec = np.asarray(vec, dtype=float)
    return lambda x: np.broadcast_to(vec, np.shape(x)).copy()


@pytest.fixture(scope="module")
def random_setup():
    c = gen_random_dilute(300, 0.03, seed=3, velocity_field=lambda x: np.cos(3 * x))
    lam = lambda_select(c)
    return c, hg.covering_for(c, lam, 4)


class TestCellAverage:
    def test_constant(self, random_setup):
        c, cov = random_setup
        kappa = next(iter(cov.cells))
        np.testing.assert_allclose(hg.cell_average(c, cov, kappa, 4, const([1.0, -2.0, 3.0])), [1, -2, 3],
                                   rtol=1e-13)

    def test_linear_vanishes(self, random_setup):
        c, cov = random_setup
        for kappa in list(cov.cells)[:5]:
            xk = cov.cell_center(kappa)
            avg = hg.cell_average(c, cov, kappa, 4, lambda x: x - xk)
            np.testing.assert_allclose(avg, 0.0, atol=1e-14)

    def test_far_stokeslet_against_dense_sampling(self):
        c = gen_periodic(3)
        cov = hg.covering_for(c, 0.3, 4)
        kappa = next(iter(cov.cells))
        xk = cov.cell_center(kappa)
        a, v = 50.0, np.array([0.3, -1.0, 0.5])
        src = xk + np.array([0.9, 0.4, -0.2])
        field = lambda x: u_single(a, v, x - src)  # noqa: E731
        got = hg.cell_average(c, cov, kappa, 4, field, order=4)
        # midpoint grid aligned with the annulus faces (inner half-width 3/8 of lambda)
        k = 160
        t = (np.arange(k) + 0.5) / k - 0.5
        mesh = np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)
        mesh = mesh[np.abs(mesh).max(axis=1) > 0.375]
        want = field(xk + cov.lam * mesh).mean(axis=0)
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6 * np.linalg.norm(want))

    def test_degenerate_annulus(self, random_setup):
        c, cov = random_setup
        with pytest.raises(ValueError):
            hg.cell_average(c, cov, next(iter(cov.cells)), 1, const(E1))


class TestDragSums:
    def test_zero_velocity(self):
        c = gen_periodic(4)
        cov = hg.covering_for(c, lambda_select(c), 4)
        assert hg.interior_drag_sum(c, cov, const(E1)) == 0.0

    def test_single_particle(self):
        c = ParticleCloud(np.array([[0.5, 0.5, 0.5]]), np.array([E1]))
        cov = hg.covering_for(c, lambda_select(c), 4)
        assert cov.corridor_indices.size == 0
        assert hg.interior_drag_sum(c, cov, const(E1)) == pytest.approx(6 * np.pi)

    def test_periodic_loop_oracle(self):
        c = gen_periodic(4, velocity_field=lambda x: np.sin(4 * x))
        cov = hg.covering_for(c, lambda_select(c), 4)
        A = np.array([0.2, 0.7, -0.4])
        full = 0.0
        inner = 0.0
        for i in range(c.n):
            term = 6 * np.pi / c.n * float(c.velocities[i] @ A)
            full += term
            if i not in set(cov.corridor_indices.tolist()):
                inner += term
        assert hg.interior_drag_sum(c, cov, const(A), include_corridor=True) == pytest.approx(full, abs=1e-14)
        assert hg.interior_drag_sum(c, cov, const(A)) == pytest.approx(inner, abs=1e-14)

    def test_corridor_terms_restore_full_sum(self, random_setup):
        c, cov = random_setup
        w = TestField((0.5, 0.5, 0.5), 0.4, (1.0, 0.5, 0.2))
        wh = np.sum(w(c.centers) * c.velocities, axis=1)
        corridor = 6 * np.pi / c.n * wh[cov.corridor_indices].sum()
        assert hg.interior_drag_sum(c, cov, w) + corridor == pytest.approx(
            hg.interior_drag_sum(c, cov, w, include_corridor=True), rel=1e-12)
        assert hg.interior_drag_sum(c, cov, w, include_corridor=True) == pytest.approx(
            6 * np.pi / c.n * wh.sum(), rel=1e-12)


class TestSigma:
    def test_uniform_cells(self):
        c = gen_periodic(4)
        cov = hg.covering_for(c, 0.25, 4)
        assert all(cell.count == 1 for cell in cov.cells.values())
        sig = hg.sigma_field(c, cov, const(E1), 4)
        nonzero = [s for k, s in sig.items() if len(cov.non_corridor_indices(k))]
        assert nonzero and all(np.array_equal(s, nonzero[0]) for s in nonzero)

    def test_empty_cell_has_zero_weight(self):
        c = gen_periodic(2)
        cov = hg.covering_for(c, 0.8, 4)
        sig = hg.sigma_field(c, cov, const(E1), 4)
        for k, s in sig.items():
            if len(cov.non_corridor_indices(k)) == 0:
                assert not np.any(s)

    def test_l1_bound(self, random_setup):
        c, cov = random_setup
        w = TestField((0.5, 0.5, 0.5), 0.45, (0.0, 1.0, 1.0))
        sig = hg.sigma_field(c, cov, w, 4)
        assert hg.sigma_l1(cov, sig, 4) <= w.w_inf

    def test_cell_avg_sum_with_constant_field(self, random_setup):
        c, cov = random_setup
        w = TestField((0.5, 0.5, 0.5), 0.45, (0.0, 1.0, 1.0))
        u = np.array([0.5, -1.0, 2.0])
        keep = np.setdiff1d(np.arange(c.n), cov.corridor_indices)
        oracle = 6 * np.pi / c.n * np.sum(w(c.centers[keep]) @ u)
        assert hg.cell_avg_sum(c, cov, w, 4, const(u)) == pytest.approx(oracle, rel=1e-12)


class TestBudgets:
    def test_p21_examples(self):
        assert hg.budget_p21(0, 512, 1 / 16, 1.0) == 0.0
        assert hg.budget_p21(8, 512, 1 / 16, 1.0) == pytest.approx(0.125 * (1 / 512 + 0.5))
        assert hg.budget_p21(8, 512, 1 / 16, 1.0) == pytest.approx(0.06274, abs=5e-6)
        assert hg.budget_p21(8, 512, 1 / 8, 1.0) < hg.budget_p21(8, 512, 1 / 16, 1.0)

    def test_p41_arithmetic(self):
        want = 2 * np.sqrt(0.25 + 4 * 0.04 + 4 ** (1 / 3) * 100 * 0.2**4
                           + 100 * 0.2**5 / (4 ** (2 / 3) * 0.1) + 0.2**3 / 0.1)
        assert hg.budget_p41(1000, 0.2, 0.1, 4, 1.0, 1.0, 1.0) == pytest.approx(want, rel=1e-12)

    def test_p41_small_lambda_limit(self):
        got = hg.budget_p41(1000, 1e-9, 0.1, 9, 2.0, 0.5, 3.0)
        assert got == pytest.approx(1.25 * 2.0 * 3.0 / 3.0, rel=1e-6)

    def test_p41_interior_minimizer_in_delta(self):
        deltas = np.arange(4, 400)
        vals = [hg.budget_p41(1000, 0.2, 0.1, int(d), 1.0, 1.0, 1.0) for d in deltas]
        k = int(np.argmin(vals))
        assert 0 < k < len(deltas) - 1

    def test_p41_rejects_small_delta(self):
        with pytest.raises(ValueError):
            hg.budget_p41(1000, 0.2, 0.1, 3, 1.0, 1.0, 1.0)

    def test_p21_max_uses_cells(self):
        c = gen_periodic(4, velocity_field=(1.0, 0, 0))
        cov = hg.covering_for(c, lambda_select(c), 4)
        best = hg.budget_p21_max(c, cov, 1.0)
        assert best > 0
        for kappa in cov.cells:
            m = len(cov.non_corridor_indices(kappa))
            if m:
                assert hg.budget_p21(m, c.n, hg.cell_min_distance(c, cov, kappa), 1.0) <= best


class TestSingleParticleChain:
    a = 8.0
    v = np.array([0.4, -1.0, 0.3])
    half = 0.4

    def test_compact_field_volume_equals_sphere(self):
        w = TestField((0.02, -0.03, 0.01), 0.3, (0.3, 0.2, 1.0))
        vol = volume_pairing(self.a, self.v, w.gradient, self.half, 48, 32)
        sph = sphere_pairing(self.a, self.v, w)
        assert cube_pairing(self.a, self.v, w, np.zeros(3), self.half) == pytest.approx(0.0, abs=1e-12)
        assert vol == pytest.approx(sph, rel=1e-3)

    def test_constant_field_sphere_balances_cube(self):
        f = const([0.1, 0.5, -0.8])
        sph = sphere_pairing(self.a, self.v, f)
        cube = cube_pairing(self.a, self.v, f, np.zeros(3), self.half)
        assert sph == pytest.approx(-cube, rel=1e-3)
        assert sph == pytest.approx(6 * np.pi / self.a * self.v @ [0.1, 0.5, -0.8], rel=1e-10)


class TestExperiment:
    def test_zero_velocity(self):
        c = gen_periodic(4)
        r = hg.weak_form_experiment(c, hg.default_test_field())
        assert r.lhs == 0.0
        assert abs(r.rhs) < 1e-12 and r.residual < 1e-12

    @pytest.mark.slow
    def test_surface_lhs_matches_volume_quadrature(self):
        # the volume rule sees kinks on every sphere, so it needs fine panels
        c = gen_periodic(3, velocity_field=(1.0, 0.0, 0.0))
        w = TestField((0.5, 0.55, 0.5), 0.3, (0.0, 0.0, 1.0))
        surf = hg.lhs_surface(c, w, order=16)
        assert hg.lhs_surface(c, w, order=12) == pytest.approx(surf, rel=5e-4)
        vol = hg.lhs_volume(c, w, order=16, subdivisions=10)
        assert surf == pytest.approx(vol, rel=1e-3)

    def test_report_row_and_csv(self, tmp_path):
        c = gen_periodic(4, velocity_field=(1.0, 0.0, 0.0))
        r = hg.weak_form_experiment(c, hg.default_test_field())
        row = r.row()
        assert tuple(row) == hg.REPORT_COLUMNS
        assert row["residual"] == abs(r.lhs - r.rhs) >= 0
        assert r.budget_p41 > 0 and r.budget_p21_max > 0
        hg.write_report_csv([r, r], tmp_path / "e.csv")
        rows = list(csv.DictReader(open(tmp_path / "e.csv")))
        assert len(rows) == 2 and float(rows[0]["lhs"]) == r.lhs

    def test_interior_sum_is_recomputable(self):
        c = gen_periodic(4, velocity_field=(1.0, 0.0, 0.0))
        w = hg.default_test_field()
        r = hg.weak_form_experiment(c, w)
        cov = hg.covering_for(c, r.lam, r.delta)
        assert r.interior_sum == hg.interior_drag_sum(c, cov, w)
        assert r.cell_avg_sum == pytest.approx(hg.cell_avg_sum(c, cov, w, r.delta, StokesletSum.from_cloud(c).velocity))

    def test_rejects_field_outside_box(self):
        c = gen_periodic(4)
        with pytest.raises(ValueError):
            hg.weak_form_experiment(c, TestField((0.1, 0.5, 0.5), 0.3, (0, 0, 1)))

    def test_default_grid(self):
        assert hg.default_grid(gen_periodic(2)).shape == (4, 4, 4)
        assert hg.default_grid(gen_periodic(6)).shape == (6, 6, 6)
        assert hg.default_grid(ParticleCloud(np.full((1, 3), 0.5), np.zeros((1, 3)),
                                             Box((0, 0, 0), (2, 2, 2)))).shape == (4, 4, 4)
