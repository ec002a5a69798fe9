import numpy as np
from django.test import SimpleTestCase

from geometry.calculus import CotangentState, HamiltonianModel, LagrangianModel, TangentState, legendre
from geometry.dynamics import ForceField, NewtonianSystem, integrate, rhs_p, rhs_v
from geometry.exceptions import DegenerateOmega

EUCLIDEAN_L = "(v1^2 + v2^2) / 2"
EUCLIDEAN_H = "(p1^2 + p2^2) / 2"


def euclidean_system(force=None, n=2):
    L = LagrangianModel(n, f"({' + '.join(f'v{i}^2' for i in range(1, n + 1))}) / 2")
    H = HamiltonianModel.from_expression(n, f"({' + '.join(f'p{i}^2' for i in range(1, n + 1))}) / 2", L)
    return NewtonianSystem(H, ForceField(n, force) if force is not None else ForceField.zero(n))


class ForceFieldTests(SimpleTestCase):

    def test_zero_force(self):
        Q = ForceField.zero(3)
        self.assertTrue(Q.is_zero)
        value, Q_x, Q_p = Q.jet([0, 0, 0], [1, 0, 0])
        self.assertFalse(np.any(value) or np.any(Q_x) or np.any(Q_p))

    def test_jet_layout(self):
        Q = ForceField(2, ["x2 * p1", "p2^2"])
        value, Q_x, Q_p = Q.jet([1.0, 3.0], [2.0, 5.0])
        np.testing.assert_allclose(value, [6.0, 25.0])
        np.testing.assert_allclose(Q_x, [[0.0, 2.0], [0.0, 0.0]])
        np.testing.assert_allclose(Q_p, [[3.0, 0.0], [0.0, 10.0]])

    def test_rejects_velocity_symbols(self):
        with self.assertRaises(ValueError):
            ForceField(2, ["v1", "0"])

    def test_rejects_wrong_length(self):
        with self.assertRaises(ValueError):
            ForceField(3, ["0", "0"])

    def test_from_acceleration(self):
        L = LagrangianModel(2, EUCLIDEAN_L)
        H = HamiltonianModel.from_expression(2, EUCLIDEAN_H, L)
        # v̇ = 0.1 v reproduces Q = 0.1 p for the Euclidean model.
        Q = ForceField.from_acceleration(["0.1*v1", "0.1*v2"], L, H)
        np.testing.assert_allclose(Q.evaluate([0.0, 0.0], [1.0, 2.0]), [0.1, 0.2])


class RightHandSideTests(SimpleTestCase):

    def test_momentum_examples(self):
        system = euclidean_system()
        dx, dp = rhs_p(system, CotangentState([0.3, -0.2], [1.0, 0.0]))
        np.testing.assert_allclose(dx, [1.0, 0.0])
        np.testing.assert_allclose(dp, [0.0, 0.0])
        dx, _ = rhs_p(system, CotangentState([0.0, 0.0], [2.0, 0.0]))
        np.testing.assert_allclose(dx, [0.5, 0.0])

    def test_momentum_force(self):
        system = euclidean_system(["0.1*p1", "0.1*p2"])
        _, dp = rhs_p(system, CotangentState([0.0, 0.0], [1.0, 0.0]))
        np.testing.assert_allclose(dp, [0.1, 0.0])

    def test_velocity_example(self):
        dx, dv = rhs_v(euclidean_system(), TangentState([0.0, 0.0], [1.0, 0.0]))
        np.testing.assert_allclose(dx, [1.0, 0.0])
        np.testing.assert_allclose(dv, [0.0, 0.0], atol=1e-15)

    def test_degenerate_omega(self):
        with self.assertRaises(DegenerateOmega):
            rhs_p(euclidean_system(), CotangentState([0.0, 0.0], [0.0, 0.0]))


class IntegrationTests(SimpleTestCase):

    def test_straight_line(self):
        trajectory = integrate(euclidean_system(), CotangentState([0.0, 0.0], [1.0, 0.0]), 1.0, 1e-3)
        self.assertEqual(len(trajectory), 1001)
        np.testing.assert_allclose(trajectory.x[-1], [1.0, 0.0], atol=1e-10)

    def test_time_reversal(self):
        system = euclidean_system(["0.1*p1", "0.1*p2"])
        forward = integrate(system, CotangentState([0.1, 0.2], [0.8, 0.6]), 0.5, 1e-3)
        back = integrate(system, forward.state(len(forward) - 1), -0.5, 1e-3)
        np.testing.assert_allclose(back.x[-1], [0.1, 0.2], atol=1e-10)
        np.testing.assert_allclose(back.p[-1], [0.8, 0.6], atol=1e-10)

    def test_representations_agree(self):
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2 + sin(x1)", LagrangianModel(2, "(v1^2 + v2^2) / 2 - sin(x1)"))
        L = H.lagrangian
        for force in (None, ["0.1*p1", "0.1*p2"]):
            system = NewtonianSystem(H, ForceField(2, force) if force else ForceField.zero(2))
            q0 = TangentState([0.2, -0.1], [0.8, 0.6])
            velocity_run = integrate(system, q0, 1.0, 1e-3)
            momentum_run = integrate(system, legendre(L, q0), 1.0, 1e-3)
            np.testing.assert_allclose(velocity_run.x, momentum_run.x, atol=1e-6)
            paired = np.array([L.momentum(x, v) for x, v in zip(velocity_run.x, velocity_run.fiber)])
            np.testing.assert_allclose(paired, momentum_run.p, atol=1e-6)

    def test_energy_is_conserved_without_force(self):
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2 + sin(x1)")
        trajectory = integrate(NewtonianSystem(H, ForceField.zero(2)), CotangentState([0.0, 0.0], [1.0, 0.5]), 1.0, 1e-3)
        self.assertLessEqual(trajectory.energy_drift(H), 1e-10)

    def test_rk4_convergence_order(self):
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2 + sin(x1)")
        system = NewtonianSystem(H, ForceField(2, ["0.1*p1", "0.1*p2"]))
        c0 = CotangentState([0.0, 0.0], [1.0, 0.5])
        reference = integrate(system, c0, 1.0, 1e-3).x[-1]
        coarse = np.max(np.abs(integrate(system, c0, 1.0, 0.1).x[-1] - reference))
        fine = np.max(np.abs(integrate(system, c0, 1.0, 0.05).x[-1] - reference))
        self.assertTrue(12 <= coarse / fine <= 20, coarse / fine)

    def test_invalid_arguments(self):
        system = euclidean_system()
        c0 = CotangentState([0.0, 0.0], [1.0, 0.0])
        with self.assertRaises(ValueError):
            integrate(system, c0, 0.0)
        with self.assertRaises(ValueError):
            integrate(system, c0, 1.0, h=-0.1)

    def test_csv_rows(self):
        trajectory = integrate(euclidean_system(), CotangentState([0.0, 0.0], [1.0, 0.0]), 0.1, 0.01)
        rows = trajectory.to_rows()
        self.assertEqual(trajectory.header, ['t', 'x1', 'x2', 'p1', 'p2'])
        self.assertEqual(len(rows), 11)
        self.assertEqual(rows[-1][1], trajectory.x[-1][0])
