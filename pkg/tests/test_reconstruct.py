import math

import numpy as np
import pytest

from ppic2d.geom2d import InterfaceCut, Point2, Polygon, clip_halfplane, clip_parabola_moments, polygon_moments
from ppic2d.reconstruct import (
    CellStencil,
    Method,
    constrained_cost,
    cost_lvira,
    cost_mof,
    elvira_candidates,
    grad_cost_lvira,
    grad_cost_mof,
    initial_bracket,
    moment_derivative,
    reconstruct_cell,
    reconstruct_field,
    shift_for_volume,
    youngs_normal,
)


def cell_box(cx, cy, hx, hy):
    return Polygon.box(cx - hx / 2, cy - hy / 2, cx + hx / 2, cy + hy / 2)


def exact_stencil(cut, h=0.1, hy=None, center=(0.0, 0.0), kappa=None):
    """Stencil holding the exact moments of the region cut.level <= 0."""
    hy = h if hy is None else hy
    alpha = np.zeros((3, 3))
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            box = cell_box(center[0] + di * h, center[1] + dj * hy, h, hy)
            alpha[di + 1, dj + 1] = clip_parabola_moments(box, cut).m0 / (h * hy)
    m = clip_parabola_moments(cell_box(center[0], center[1], h, hy), cut)
    return CellStencil(np.clip(alpha, 0, 1), h, hy, center, m1_ref=tuple(m.m1), kappa=kappa)


def random_line_through_cell(rng, h):
    theta = rng.uniform(-math.pi, math.pi)
    anchor = Point2(*rng.uniform(-0.3 * h, 0.3 * h, 2))
    return InterfaceCut(anchor, theta, 0.0, 0.0)


def volume_cut(stencil, theta, kappa=0.0):
    target = stencil.alpha[1, 1] * stencil.cell_area
    phi = shift_for_volume(theta, kappa, (stencil.hx, stencil.hy), target)
    return InterfaceCut(stencil.center, theta, kappa, phi)


def angle_diff(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


class TestShift:
    def test_linear_half_cell(self):
        assert shift_for_volume(0.3, 0.0, (1.0, 1.0), 0.5) == pytest.approx(0.0, abs=1e-15)

    def test_volume_matches_target(self):
        rng = np.random.default_rng(1)
        counters = np.zeros(3, dtype=np.int64)
        for _ in range(500):
            theta = rng.uniform(-math.pi, math.pi)
            kappa = rng.uniform(-4, 4) / 0.1
            target = rng.uniform(0.001, 0.999) * 0.01
            phi = shift_for_volume(theta, kappa, (0.1, 0.1), target, counters)
            m0 = clip_parabola_moments(cell_box(0, 0, 0.1, 0.1), InterfaceCut((0, 0), theta, kappa, phi)).m0
            assert abs(m0 - target) <= 1e-12 * 0.01
        assert counters[1] / counters[2] <= 10.0

    def test_bracket_contains_root(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            theta = rng.uniform(-math.pi, math.pi)
            kappa = rng.uniform(-40, 40)
            target = rng.uniform(0.0, 1.0) * 0.01
            lo, hi = initial_bracket(theta, kappa, (0.1, 0.1), target)
            box = cell_box(0, 0, 0.1, 0.1)
            f = lambda p: clip_parabola_moments(box, InterfaceCut((0, 0), theta, kappa, p)).m0 - target
            assert f(lo) <= 1e-15 and f(hi) >= -1e-15

    def test_rejects_impossible_target(self):
        with pytest.raises(ValueError):
            shift_for_volume(0.0, 0.0, (1.0, 1.0), 1.5)


class TestGradients:
    def test_lvira_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 0.1
        for _ in range(60):
            exact = InterfaceCut(Point2(*rng.uniform(-0.02, 0.02, 2)), rng.uniform(-math.pi, math.pi),
                                 rng.uniform(-3, 3), 0.0)
            st = exact_stencil(exact, h)
            if not 0.01 < st.alpha[1, 1] < 0.99:
                continue
            theta = exact.theta + rng.uniform(-0.3, 0.3)
            kappa = rng.uniform(-2, 2)
            cut = volume_cut(st, theta, kappa)
            g, ok = grad_cost_lvira(cut, st)
            if not ok:
                continue
            d = 1e-6
            fd_t = (constrained_cost(Method.LVIRA, st, theta + d, kappa)
                    - constrained_cost(Method.LVIRA, st, theta - d, kappa)) / (2 * d)
            fd_k = (constrained_cost(Method.LVIRA, st, theta, kappa + d / h)
                    - constrained_cost(Method.LVIRA, st, theta, kappa - d / h)) / (2 * d)
            assert g[0] == pytest.approx(fd_t, rel=1e-5, abs=1e-8)
            assert g[1] == pytest.approx(fd_k, rel=1e-5, abs=1e-8)

    def test_mof_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for _ in range(60):
            exact = InterfaceCut(Point2(*rng.uniform(-0.02, 0.02, 2)), rng.uniform(-math.pi, math.pi),
                                 rng.uniform(-3, 3), 0.0)
            st = exact_stencil(exact, 0.1)
            if not 0.01 < st.alpha[1, 1] < 0.99:
                continue
            theta = exact.theta + rng.uniform(-0.5, 0.5)
            cut = volume_cut(st, theta)
            g, ok = grad_cost_mof(cut, st)
            if not ok:
                continue
            d = 1e-6
            fd = (constrained_cost(Method.MOF, st, theta + d) - constrained_cost(Method.MOF, st, theta - d)) / (2 * d)
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_linear_moment_derivative_is_cubed_length_over_twelve(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            h = 0.1
            st = exact_stencil(random_line_through_cell(rng, h), h)
            if not 1e-3 < st.alpha[1, 1] < 1 - 1e-3:
                continue
            theta = rng.uniform(-math.pi, math.pi)
            cut = volume_cut(st, theta)
            # chord length of the straight interface inside the cell
            box = cell_box(0, 0, h, h)
            poly = clip_halfplane(box, cut)
            c, s = math.cos(theta), math.sin(theta)
            v = poly.vertices
            on = np.abs(v @ np.array([c, s]) - cut.phi) < 1e-12
            pts = v[on]
            w = pts @ np.array([-s, c])
            length = w.max() - w.min()
            dx, dy = moment_derivative(cut, st)
            assert math.hypot(dx, dy) == pytest.approx(length ** 3 / 12, rel=1e-10)

    def test_costs_vanish_at_exact_line(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            exact = random_line_through_cell(rng, 0.1)
            st = exact_stencil(exact, 0.1)
            if not 0.01 < st.alpha[1, 1] < 0.99:
                continue
            cut = volume_cut(st, exact.theta)
            assert cost_lvira(cut, st) < 1e-20
            assert cost_mof(cut, st) < 1e-10


class TestLinearExactness:
    @pytest.mark.parametrize("method", ["ELVIRA", "LVIRA", "MOF", "PLVIRA", "PMOF"])
    def test_random_lines_reconstructed_exactly(self, method):
        rng = np.random.default_rng(7)
        m = Method.parse(method)
        h = 0.05
        done = 0
        while done < 25:
            exact = random_line_through_cell(rng, h)
            st = exact_stencil(exact, h, kappa=0.0 if m.uses_given_curvature else None)
            if not 1e-6 < st.alpha[1, 1] < 1 - 1e-6:
                continue
            r = reconstruct_cell(m, st)
            assert angle_diff(r.cut.theta, exact.theta) < 1e-7
            box = cell_box(0, 0, h, h)
            a = clip_parabola_moments(box, r.cut).m0
            assert a == pytest.approx(st.alpha[1, 1] * h * h, abs=1e-12 * h * h)
            done += 1

    def test_elvira_has_six_candidates_including_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            exact = random_line_through_cell(rng, 0.1)
            st = exact_stencil(exact, 0.1)
            if not 0.01 < st.alpha[1, 1] < 0.99:
                continue
            cands = elvira_candidates(st)
            assert len(cands) == 6
            assert min(angle_diff(c.theta, exact.theta) for c in cands) < 1e-9

    def test_youngs_normal_points_to_gas(self):
        # liquid below y = 0: normal +y
        st = exact_stencil(InterfaceCut((0, 0), math.pi / 2, 0.0, 0.0), 0.1)
        assert angle_diff(youngs_normal(st), math.pi / 2) < 1e-12


class TestParabolic:
    def test_prost_recovers_circle_curvature(self):
        R = 0.5
        h = R / 16
        errs = []
        for ang in np.linspace(0.1, 1.4, 6):
            # circle through the cell centre, liquid inside
            cx, cy = -R * math.cos(ang), -R * math.sin(ang)
            alpha = np.zeros((3, 3))
            from ppic2d.fields import Circle, Grid, init_moments_exact
            grid = Grid((cx - 1.5 * h + R * math.cos(ang) + cx * 0, 0), 3, 3, h, h, (False, False))
            g = Grid((-1.5 * h, -1.5 * h), 3, 3, h, h, (False, False))
            alpha, m1 = init_moments_exact(Circle((cx, cy), R), g)
            st = CellStencil(alpha, h, h, (0.0, 0.0), kappa=1.0)
            r = reconstruct_cell(Method.PROST, st)
            errs.append(abs(r.cut.kappa - 1 / R) * R)
        assert max(errs) < 0.05

    def test_pmof_beats_mof_on_parabola(self):
        rng = np.random.default_rng(9)
        h = 0.05
        wins = 0
        for _ in range(10):
            kappa = rng.uniform(-4, 4)
            exact = InterfaceCut(Point2(*rng.uniform(-0.2 * h, 0.2 * h, 2)), rng.uniform(-math.pi, math.pi), kappa, 0.0)
            st = exact_stencil(exact, h, kappa=kappa)
            if not 0.05 < st.alpha[1, 1] < 0.95:
                continue
            rm = reconstruct_cell(Method.MOF, st)
            rp = reconstruct_cell(Method.PMOF, st)
            wins += rp.cost_value <= rm.cost_value + 1e-14
            assert rp.cut.kappa == kappa
        assert wins >= 5

    def test_plvira_exact_for_given_parabola(self):
        # vertex on the normal through the cell centre, so the parabola is in the search space
        exact = InterfaceCut(Point2(0.003 * math.cos(0.7), 0.003 * math.sin(0.7)), 0.7, 3.0, 0.0)
        st = exact_stencil(exact, 0.05, kappa=3.0)
        r = reconstruct_cell(Method.PLVIRA, st)
        assert angle_diff(r.cut.theta, 0.7) < 1e-7
        assert r.cut.phi == pytest.approx(0.003, abs=1e-10)


class TestField:
    def test_pure_cells_not_reconstructed(self):
        alpha = np.zeros((6, 6))
        alpha[:, :3] = 1.0
        r = reconstruct_field("ELVIRA", alpha, 0.1, 0.1)
        assert not r.mixed.any()

    def test_field_matches_cell_reconstruction(self):
        from ppic2d.fields import Circle, Grid, init_moments_exact

        g = Grid.square(16)
        alpha, m1 = init_moments_exact(Circle((0.51, 0.49), 0.3), g)
        r = reconstruct_field("MOF", alpha, g.hx, g.hy, m1=m1)
        i, j = np.argwhere(r.mixed)[3]
        cx, cy = g.cell_center(i, j)
        st = CellStencil(alpha[i - 1:i + 2, j - 1:j + 2], g.hx, g.hy, (cx, cy), m1_ref=tuple(m1[i, j]))
        rc = reconstruct_cell("MOF", st)
        assert angle_diff(rc.cut.theta, r.theta[i, j]) < 1e-12
        assert rc.cut.phi == pytest.approx(r.phi[i, j], abs=1e-15)

    def test_rotation_equivariance(self):
        from ppic2d.fields import Circle, Grid, init_moments_exact

        g = Grid.square(12)
        # off-centre so that no two ELVIRA candidates tie
        alpha, _ = init_moments_exact(Circle((0.53, 0.46), 0.3), g)
        r0 = reconstruct_field("ELVIRA", alpha, g.hx, g.hy)
        r1 = reconstruct_field("ELVIRA", np.rot90(alpha).copy(), g.hx, g.hy)
        t_rot = np.rot90(r0.theta) + math.pi / 2
        mask = np.rot90(r0.mixed)
        assert np.array_equal(mask, r1.mixed)
        d = np.abs(np.remainder(t_rot[mask] - r1.theta[mask] + math.pi, 2 * math.pi) - math.pi)
        assert d.max() < 1e-9

    def test_mean_evaluations_reported(self):
        from ppic2d.fields import Circle, Grid, init_moments_exact

        g = Grid.square(16)
        alpha, m1 = init_moments_exact(Circle((0.5, 0.5), 0.3), g)
        r = reconstruct_field("PMOF", alpha, g.hx, g.hy, m1=m1, kappa=np.full(alpha.shape, 1 / 0.3))
        assert r.mean_evaluations > 0
        assert 0 < r.mean_brent <= 10
        assert r.n_failed == 0

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            Method.parse("VOFI")
