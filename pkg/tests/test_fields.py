import math

import numpy as np
import pytest

from ppic2d.fields import (Circle, Flower, Grid, HalfPlane, StaggeredVelocity, UniformVelocity,
                           VortexVelocity, cfl_timestep, error_norms, init_moments_exact,
                           symmdiff_per_cell, vortex_velocity)
from ppic2d.geom2d import InterfaceCut, Point2, clip_halfplane, polygon_moments
from ppic2d.reconstruct import reconstruct_field


class TestGrid:
    def test_cell_boxes(self):
        g = Grid((0.5, -1.0), 4, 3, 0.25, 0.5)
        box = g.cell_box(2, 1)
        assert box.vertices.min(axis=0).tolist() == [1.0, -0.5]
        assert box.vertices.max(axis=0).tolist() == [1.25, 0.0]
        assert g.h == 0.5
        assert g.cell_area == 0.125

    def test_square(self):
        g = Grid.square(8, -0.5, 0.5, periodic=True)
        assert g.hx == g.hy == 0.125
        assert g.periodic == (True, True)
        X, Y = g.corners()
        assert X.shape == (9, 9)
        assert X[0, 0] == -0.5 and Y[-1, -1] == 0.5

    @pytest.mark.parametrize("args", [(0, 1, 1.0, 1.0), (1, 1, 0.0, 1.0), (1, 1, 1.0, -1.0)])
    def test_invalid(self, args):
        nx, ny, hx, hy = args
        with pytest.raises(ValueError):
            Grid((0.0, 0.0), nx, ny, hx, hy)


class TestInitMoments:
    def test_circle_inside_one_cell(self):
        g = Grid.square(1)
        c = Circle((0.43, 0.56), 0.2)
        alpha, m1 = init_moments_exact(c, g)
        assert alpha[0, 0] == pytest.approx(math.pi * 0.04, abs=1e-12)
        assert m1[0, 0] == pytest.approx(np.array([0.43, 0.56]) * math.pi * 0.04, abs=1e-12)

    def test_halfplane_matches_clip(self):
        g = Grid.square(10)
        shape = HalfPlane(2.3, 0.07, (0.45, 0.52))
        alpha, m1 = init_moments_exact(shape, g)
        cut = InterfaceCut(Point2(0.45, 0.52), 2.3, 0.0, 0.07)
        for i in range(10):
            for j in range(10):
                mom = polygon_moments(clip_halfplane(g.cell_box(i, j), cut))
                assert alpha[i, j] * g.cell_area == pytest.approx(mom.m0, abs=1e-14)
                assert m1[i, j] == pytest.approx(mom.m1, abs=1e-14)

    def test_circle_total_area(self):
        for n in (16, 64):
            alpha, _ = init_moments_exact(Circle((0.5, 0.5), 0.3), Grid.square(n))
            assert alpha.sum() / n ** 2 == pytest.approx(math.pi * 0.09, abs=1e-11)

    def test_flower_depth_self_convergence(self):
        g = Grid.square(128, -0.5, 0.5)
        shallow, _ = init_moments_exact(Flower(), g, max_depth=12)
        deep, _ = init_moments_exact(Flower(), g, max_depth=24)
        assert abs(shallow.sum() - deep.sum()) * g.cell_area <= 1e-10

    def test_tolerance_halving(self):
        g = Grid.square(64, -0.5, 0.5)
        tol = 1e-10
        a1, _ = init_moments_exact(Flower(), g, tol=tol)
        a2, _ = init_moments_exact(Flower(), g, tol=tol / 2)
        assert np.max(np.abs(a1 - a2)) <= 2 * tol

    def test_flower_area_across_resolutions(self):
        area = Flower().area()
        for n in (32, 64, 128):
            g = Grid.square(n, -0.5, 0.5)
            alpha, _ = init_moments_exact(Flower(), g)
            assert alpha.sum() * g.cell_area == pytest.approx(area, rel=1e-8)

    def test_flower_is_continuous(self):
        # the full-angle form has no jump across the negative x axis
        f = Flower()
        cx, cy = f.center
        eps = 1e-9
        above = f.level(cx - 0.3, cy + eps)
        below = f.level(cx - 0.3, cy - eps)
        assert abs(above - below) < 1e-6

    def test_flower_sign(self):
        f = Flower()
        assert f.level(*f.center) < 0
        assert f.level(0.49, 0.49) > 0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            init_moments_exact(Circle((0.5, 0.5), 0.2), Grid.square(4), tol=1e-14)
        with pytest.raises(ValueError):
            init_moments_exact(Circle((math.nan, 0.5), 0.2), Grid.square(4))
        with pytest.raises(ValueError):
            Circle((0.5, 0.5), 0.0)


class TestVortex:
    def test_vanishes_at_half_period(self):
        x, y = np.random.default_rng(0).uniform(0, 1, (2, 50))
        u, v = vortex_velocity(0.5, x, y)
        assert np.max(np.abs(u)) < 1e-15 and np.max(np.abs(v)) < 1e-15
        u, v = vortex_velocity(1.0, x, y, period=2.0)
        assert np.max(np.abs(u)) < 1e-15 and np.max(np.abs(v)) < 1e-15

    def test_no_normal_flow_on_x_walls(self):
        y = np.linspace(0, 1, 33)
        for x in (0.0, 1.0):
            u, _ = vortex_velocity(0.2, np.full_like(y, x), y)
            assert np.max(np.abs(u)) < 1e-15

    def test_stream_function_derivatives(self):
        def psi(t, x, y):
            return math.cos(math.pi * t) / math.pi * math.sin(math.pi * x) ** 2 * math.cos(math.pi * y) ** 2

        rng = np.random.default_rng(1)
        e = 1e-6
        for x, y, t in rng.uniform(0, 1, (20, 3)):
            u, v = vortex_velocity(t, x, y)
            du = (psi(t, x, y + e) - psi(t, x, y - e)) / (2 * e)
            dv = -(psi(t, x + e, y) - psi(t, x - e, y)) / (2 * e)
            assert float(u) == pytest.approx(du, abs=1e-8)
            assert float(v) == pytest.approx(dv, abs=1e-8)

    def test_divergence_free(self):
        rng = np.random.default_rng(2)
        e = 1e-4
        for x, y, t in rng.uniform(0, 1, (50, 3)):
            div = ((vortex_velocity(t, x + e, y)[0] - vortex_velocity(t, x - e, y)[0])
                   + (vortex_velocity(t, x, y + e)[1] - vortex_velocity(t, x, y - e)[1])) / (2 * e)
            assert abs(div) <= 1e-6

    def test_time_symmetry(self):
        x, y = np.random.default_rng(3).uniform(0, 1, (2, 40))
        for t in (0.0, 0.13, 0.4):
            u0, v0 = vortex_velocity(t, x, y)
            u1, v1 = vortex_velocity(1.0 - t, x, y)
            assert np.allclose(u1, -u0, atol=1e-15) and np.allclose(v1, -v0, atol=1e-15)

    def test_staggered_sampling_converges(self):
        x, y = np.random.default_rng(4).uniform(0.1, 0.9, (2, 30))
        errs = []
        for n in (32, 64):
            g = Grid.square(n)
            sv = StaggeredVelocity(VortexVelocity(), g, 1.0 / n)
            u, v = sv(0.3, x, y)
            ue, ve = vortex_velocity(0.3, x, y)
            errs.append(max(np.max(np.abs(u - ue)), np.max(np.abs(v - ve))))
        assert errs[1] < 0.3 * errs[0]

    def test_staggered_exact_for_uniform(self):
        g = Grid.square(8, periodic=True)
        sv = StaggeredVelocity(UniformVelocity(0.7, -0.2), g, 0.1)
        u, v = sv(0.25, np.array([0.01, 0.99, 0.5]), np.array([0.3, 0.02, 0.97]))
        assert np.allclose(u, 0.7, atol=1e-15) and np.allclose(v, -0.2, atol=1e-15)


class TestCFL:
    def test_uniform(self):
        assert cfl_timestep(Grid.square(64), UniformVelocity(1.0), 0.0, 1.0) == 1 / 64

    def test_double_speed_halves_step(self):
        g = Grid.square(64)
        assert cfl_timestep(g, UniformVelocity(2.0), 0.0) == 0.5 * cfl_timestep(g, UniformVelocity(1.0), 0.0)

    def test_vortex_initial_speed_one(self):
        g = Grid.square(64)
        assert cfl_timestep(g, VortexVelocity(), 0.0, 0.5) == pytest.approx(0.5 / 64, rel=1e-12)

    def test_zero_velocity_uses_cap(self):
        g = Grid.square(16)
        assert cfl_timestep(g, VortexVelocity(), 0.5, cap=0.01) == 0.01
        with pytest.raises(ValueError):
            cfl_timestep(g, UniformVelocity(0.0), 0.0)

    @pytest.mark.parametrize("c", [0.0, 1.5, -1.0])
    def test_bad_courant(self, c):
        with pytest.raises(ValueError):
            cfl_timestep(Grid.square(8), UniformVelocity(1.0), 0.0, c)


class TestErrorNorms:
    def test_line_is_exact(self):
        # perpendicular to the walls, so mirrored ghost cells continue the line
        g = Grid.square(32)
        shape = HalfPlane(0.0, 0.013, (0.5, 0.5))
        alpha, m1 = init_moments_exact(shape, g)
        for method in ("ELVIRA", "LVIRA"):
            recon = reconstruct_field(method, alpha, g.hx, g.hy)
            r = error_norms(g, alpha, recon, shape, exact=(alpha, m1))
            assert r.symm_diff <= 1e-10
            assert r.frac_linf == 0.0
            assert r.m1_linf <= 1e-10

    def test_slanted_line_interior(self):
        g = Grid.square(32)
        shape = HalfPlane(0.7, 0.01, (0.5, 0.5))
        alpha, _ = init_moments_exact(shape, g)
        recon = reconstruct_field("ELVIRA", alpha, g.hx, g.hy)
        per = symmdiff_per_cell(g, alpha, recon, shape, alpha)
        assert np.max(per[2:-2, 2:-2]) <= 1e-10 * g.cell_area

    def test_circle_curvature_error_definition(self):
        g = Grid.square(32)
        shape = Circle((0.5, 0.5), 0.15)
        alpha, m1 = init_moments_exact(shape, g)
        recon = reconstruct_field("ELVIRA", alpha, g.hx, g.hy)
        kappa = np.full(alpha.shape, 1 / 0.15 + 0.25)
        r = error_norms(g, alpha, recon, shape, exact=(alpha, m1), kappa=kappa)
        assert r.kappa_linf == pytest.approx(0.25, rel=1e-12)
        assert r.n_kappa == np.count_nonzero((alpha > 1e-10) & (alpha < 1 - 1e-10))

    def test_symmdiff_against_sampling(self):
        g = Grid.square(8)
        shape = Circle((0.5, 0.5), 0.3)
        alpha, m1 = init_moments_exact(shape, g)
        recon = reconstruct_field("LVIRA", alpha, g.hx, g.hy)
        per = symmdiff_per_cell(g, alpha, recon, shape, alpha)
        i, j = np.argwhere(recon.mixed)[0]
        # midpoint sampling on a fine lattice of the cell
        k = 800
        x0, y0 = i * g.hx, j * g.hy
        s = (np.arange(k) + 0.5) / k
        X, Y = np.meshgrid(x0 + s * g.hx, y0 + s * g.hy, indexing="ij")
        cut = InterfaceCut(Point2(x0 + 0.5 * g.hx, y0 + 0.5 * g.hy), recon.theta[i, j],
                           recon.kappa[i, j], recon.phi[i, j])
        rec = np.vectorize(lambda a, b: cut.level(a, b) <= 0)(X, Y)
        ex = shape.level(X, Y) <= 0
        est = np.mean(rec != ex) * g.cell_area
        assert per[i, j] == pytest.approx(est, rel=0.05, abs=2 * g.cell_area / k)
