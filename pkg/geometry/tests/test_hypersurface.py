import numpy as np
from django.test import SimpleTestCase

from geometry.calculus import HamiltonianModel
from geometry.dynamics import ForceField, NewtonianSystem
from geometry.exceptions import DimensionTooSmall, RankDeficient, ZeroMomentum, ZeroNu
from geometry.hypersurface import (
    Hypersurface,
    NuField,
    deviation_rate_at_surface,
    normal_covector,
    pfaff_compatibility_residual,
    run_shift,
    second_fundamental_form,
    shift_nodes,
    solve_nu_curve,
    solve_nu_grid,
    surface_with_prescribed_form,
    tangent_frame,
)
from geometry.tensorfields import ExtendedConnection

CIRCLE = ["cos(y1)", "sin(y1)"]
SPHERE = ["cos(y1)*cos(y2)", "sin(y1)*cos(y2)", "sin(y2)"]


def euclidean(n, force=None, potential=''):
    H = HamiltonianModel.from_expression(n, f"({' + '.join(f'p{i}^2' for i in range(1, n + 1))}) / 2{potential}")
    return NewtonianSystem(H, ForceField(n, force) if force else ForceField.zero(n))


def circle():
    return Hypersurface(2, CIRCLE, [(-1.0, 1.0)], base=(0.0,))


def sphere_patch():
    return Hypersurface(3, SPHERE, [(-0.2, 0.2), (-0.2, 0.2)], base=(0.0, 0.0))


class FrameTests(SimpleTestCase):

    def test_circle_frame(self):
        np.testing.assert_allclose(tangent_frame(circle(), [0.0]), [[0.0], [1.0]], atol=1e-15)

    def test_plane_frame_and_normal(self):
        plane = Hypersurface(3, ["y1", "y2", "0"], [(-1, 1), (-1, 1)])
        frame = tangent_frame(plane, [0.3, -0.4])
        np.testing.assert_allclose(frame, [[1, 0], [0, 1], [0, 0]])
        np.testing.assert_allclose(normal_covector(plane, [0.3, -0.4]), [0, 0, 1])

    def test_graph_frame(self):
        graph = Hypersurface(3, ["y1", "y2", "y1^2 + 3*y2"], [(-1, 1), (-1, 1)])
        np.testing.assert_allclose(tangent_frame(graph, [0.5, 0.0]), [[1, 0], [0, 1], [1, 3]])

    def test_normal_annihilates_frame(self):
        S = sphere_patch()
        y = [0.1, -0.05]
        np.testing.assert_allclose(normal_covector(S, y) @ tangent_frame(S, y), [0, 0], atol=1e-14)
        np.testing.assert_allclose(normal_covector(S, [0.0, 0.0]), [1, 0, 0], atol=1e-15)

    def test_rank_deficient_chart(self):
        S = Hypersurface(3, ["y1", "y1", "0"], [(-1, 1), (-1, 1)])
        with self.assertRaises(RankDeficient):
            tangent_frame(S, [0.0, 0.0])

    def test_chart_validation(self):
        with self.assertRaises(ValueError):
            Hypersurface(2, ["cos(y1)", "x1"], [(-1, 1)])
        with self.assertRaises(ValueError):
            Hypersurface(2, CIRCLE, [(1, -1)])

    def test_shift_nodes(self):
        self.assertEqual(shift_nodes(sphere_patch(), 3).shape, (9, 2))


class NuSolverTests(SimpleTestCase):

    def test_circle_nu_is_constant(self):
        for force in (None, ["0.1*p1", "0.1*p2"]):
            field = solve_nu_curve(circle(), euclidean(2, force), 1.5, samples=21)
            np.testing.assert_allclose(field.values, 1.5, atol=1e-10)

    def test_ellipse_with_potential(self):
        # ν' = 2 sin(y)/ν, so ν² = 1 + 4(1 − cos y).
        ellipse = Hypersurface(2, ["2*cos(y1)", "sin(y1)"], [(0.0, 1.0)], base=(0.0,))
        system = euclidean(2, potential=" + x1")
        field = solve_nu_curve(ellipse, system, 1.0, samples=201)
        exact = np.sqrt(1 + 4 * (1 - np.cos(field.axes[0])))
        np.testing.assert_allclose(field.values, exact, atol=1e-7)

        reference = solve_nu_curve(ellipse, system, 1.0, samples=161).values[-1]
        coarse = abs(solve_nu_curve(ellipse, system, 1.0, samples=11).values[-1] - reference)
        fine = abs(solve_nu_curve(ellipse, system, 1.0, samples=21).values[-1] - reference)
        self.assertTrue(12 <= coarse / fine <= 20, coarse / fine)

    def test_off_grid_values(self):
        ellipse = Hypersurface(2, ["2*cos(y1)", "sin(y1)"], [(0.0, 1.0)], base=(0.0,))
        field = solve_nu_curve(ellipse, euclidean(2, potential=" + x1"), 1.0, samples=201)
        self.assertAlmostEqual(field.at([0.3337]), np.sqrt(1 + 4 * (1 - np.cos(0.3337))), delta=1e-7)

    def test_sphere_grid(self):
        field = solve_nu_grid(sphere_patch(), euclidean(3, ["0.1*p1", "0.1*p2", "0.1*p3"]), 1.0, samples=11)
        self.assertLessEqual(field.path_discrepancy, 1e-10)
        np.testing.assert_allclose(field.values, 1.0, atol=1e-10)

    def test_grid_needs_two_parameters(self):
        with self.assertRaises(DimensionTooSmall):
            solve_nu_grid(circle(), euclidean(2), 1.0, samples=11)

    def test_zero_nu(self):
        with self.assertRaises(ZeroNu):
            solve_nu_curve(circle(), euclidean(2), 0.0, samples=11)


class PfaffTests(SimpleTestCase):

    def test_curve_has_no_constraint(self):
        field = solve_nu_curve(circle(), euclidean(2), 1.0, samples=11)
        self.assertEqual(pfaff_compatibility_residual(circle(), euclidean(2), field, [0.2]).shape, (0, 0))

    def test_sphere_normal_force_is_compatible(self):
        S = sphere_patch()
        for force in (["0.1*p1", "0.1*p2", "0.1*p3"],
                      ["0.1*sqrt(p1^2 + p2^2 + p3^2)*p1", "0.1*sqrt(p1^2 + p2^2 + p3^2)*p2",
                       "0.1*sqrt(p1^2 + p2^2 + p3^2)*p3"]):
            system = euclidean(3, force)
            field = solve_nu_grid(S, system, 1.0, samples=11)
            for y in ([0.05, 0.1], [-0.12, 0.03]):
                self.assertLessEqual(np.max(np.abs(pfaff_compatibility_residual(S, system, field, y))), 1e-6)

    def test_sphere_curl_force_is_not(self):
        S = sphere_patch()
        system = euclidean(3, ["x2", "0", "0"])
        field = solve_nu_grid(S, system, 1.0, samples=11)
        residual = pfaff_compatibility_residual(S, system, field, [0.1, 0.15])
        self.assertGreaterEqual(np.max(np.abs(residual)), 1e-3)

    def test_deviation_rate_vanishes_on_solution(self):
        ellipse = Hypersurface(2, ["2*cos(y1)", "sin(y1)"], [(0.0, 1.0)], base=(0.0,))
        system = euclidean(2, potential=" + x1")
        field = solve_nu_curve(ellipse, system, 1.0, samples=101)
        for y in (0.137, 0.5, 0.861):
            self.assertLessEqual(abs(deviation_rate_at_surface(ellipse, system, field, [y])[0]), 1e-6)

    def test_deviation_rate_sees_a_wrong_nu(self):
        ellipse = Hypersurface(2, ["2*cos(y1)", "sin(y1)"], [(0.0, 1.0)], base=(0.0,))
        system = euclidean(2, potential=" + x1")
        rate = deviation_rate_at_surface(ellipse, system, NuField.constant_field(ellipse, 1.0), [0.5])
        self.assertAlmostEqual(rate[0], 2 * np.sin(0.5), delta=1e-6)


class ShiftTests(SimpleTestCase):

    def test_free_circle_shift_is_normal(self):
        system = euclidean(2)
        field = solve_nu_curve(circle(), system, 1.0, samples=21)
        family = run_shift(circle(), system, field, 0.5, h=1e-3, nodes=3)
        self.assertLessEqual(family.max_phi, 1e-6)
        self.assertEqual(family.phi.shape, (3, 501, 1))

    def test_normal_force_shift(self):
        system = euclidean(2, ["0.1*p1", "0.1*p2"])
        field = solve_nu_curve(circle(), system, 1.0, samples=21)
        self.assertLessEqual(run_shift(circle(), system, field, 1.0, h=1e-3, nodes=3).max_phi, 1e-4)

    def test_curl_force_breaks_normality(self):
        system = euclidean(2, ["x2", "0"])
        field = solve_nu_curve(circle(), system, 1.0, samples=41)
        family = run_shift(circle(), system, field, 0.5, h=1e-3, nodes=5)
        self.assertGreaterEqual(family.max_phi_until(0.5), 1e-2)
        self.assertLessEqual(np.max(np.abs(family.phi[:, 0, :])), 1e-6)

    def test_finite_difference_order_in_y(self):
        system = euclidean(2, ["x2", "0"])
        field = NuField.constant_field(circle(), 1.0)

        def final_phi(delta):
            return run_shift(circle(), system, field, 0.5, h=1e-2, nodes=2, delta=delta).phi[:, -1, 0]

        reference = final_phi(0.00125)
        coarse = np.max(np.abs(final_phi(0.02) - reference))
        fine = np.max(np.abs(final_phi(0.01) - reference))
        self.assertTrue(3.5 <= coarse / fine <= 4.5, coarse / fine)

    def test_csv_shape(self):
        system = euclidean(2)
        field = NuField.constant_field(circle(), 1.0)
        family = run_shift(circle(), system, field, 0.05, h=1e-2, nodes=3)
        rows = family.to_rows()
        self.assertEqual(family.header, ['t', 'node', 'y1', 'x1', 'x2', 'p1', 'p2', 'phi1'])
        self.assertEqual(len(rows), 3 * 6)
        self.assertTrue(all(len(row) == 8 for row in rows))
        self.assertEqual([row[1] for row in rows[::6]], [0, 1, 2])


class SecondFundamentalFormTests(SimpleTestCase):

    def test_plane_is_flat(self):
        plane = Hypersurface(3, ["y1", "y2", "0"], [(-1, 1), (-1, 1)])
        form = second_fundamental_form(plane, euclidean(3), NuField.constant_field(plane, 2.0),
                                       ExtendedConnection.flat(3), [0.1, 0.2])
        np.testing.assert_allclose(form.b, 0.0, atol=1e-12)

    def test_symmetry_on_random_surfaces(self):
        rng = np.random.default_rng(31)
        system = euclidean(3)
        for _ in range(5):
            a = np.round(0.3 * rng.standard_normal(5), 6)
            chart = ["y1", "y2",
                     f"({a[0]:.6f})*y1^2 + ({a[1]:.6f})*y1*y2 + ({a[2]:.6f})*y2^2"
                     f" + ({a[3]:.6f})*sin(y1)*y2 + ({a[4]:.6f})*y2^3"]
            S = Hypersurface(3, chart, [(-0.5, 0.5), (-0.5, 0.5)], base=(0.0, 0.0))
            form = second_fundamental_form(S, system, NuField.constant_field(S, 1.0),
                                           ExtendedConnection.flat(3), [0.1, -0.2], delta=1e-5)
            self.assertLessEqual(form.symmetry_defect, 1e-8)

    def test_prescribed_form_roundtrip(self):
        rng = np.random.default_rng(17)
        system = euclidean(3)
        for _ in range(5):
            A = rng.standard_normal((2, 2))
            beta = A + A.T
            p = rng.standard_normal(3)
            x0 = rng.standard_normal(3)
            S = surface_with_prescribed_form(x0, p, beta, 1.0)
            nu = float(p @ normal_covector(S, S.base))
            form = second_fundamental_form(S, system, NuField.constant_field(S, nu),
                                           ExtendedConnection.flat(3), S.base)
            np.testing.assert_allclose(form.beta, beta, atol=1e-6)
            np.testing.assert_allclose(S.point(S.base), x0, atol=1e-14)

    def test_zero_beta_is_hyperplane(self):
        S = surface_with_prescribed_form([0, 0, 0], [0, 0, 2], np.zeros((2, 2)), 1.0)
        self.assertAlmostEqual(float(S.point([0.3, -0.2])[2]), 0.0)

    def test_prescribed_form_preconditions(self):
        with self.assertRaises(ZeroMomentum):
            surface_with_prescribed_form([0, 0, 0], [0, 0, 0], np.eye(2), 1.0)
        with self.assertRaises(ZeroNu):
            surface_with_prescribed_form([0, 0, 0], [0, 0, 1], np.eye(2), 0.0)
        with self.assertRaises(ValueError):
            surface_with_prescribed_form([0, 0, 0], [0, 0, 1], [[1, 2], [0, 1]], 1.0)
