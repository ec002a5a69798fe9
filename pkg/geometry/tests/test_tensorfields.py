import numpy as np
from django.test import SimpleTestCase

from geometry.calculus import CotangentState, Domain, HamiltonianModel, LagrangianModel, TangentState, invert_metric
from geometry.exceptions import InsufficientSamples, RepresentationMismatch, ZeroMomentum
from geometry.tensorfields import (
    MOMENTUM,
    VELOCITY,
    ConnectionShift,
    ExtendedConnection,
    ExtendedTensorField,
    commutator_residual,
    concordance_residual,
    concordance_residual_momentum,
    convert_representation,
    covariant_time_derivative,
    curvature_tensors,
    hamiltonian_gradient_jets,
    horizontal_gradient,
    projector,
    representation_defect,
    vertical_gradient,
)

PENDULUM_H = "(p1^2 + p2^2) / 2 + sin(x1)"


def random_connection(n, seed):
    return ExtendedConnection.flat(n).shifted(ConnectionShift.random(n, np.random.default_rng(seed)))


def polynomial_connection():
    return ExtendedConnection(2, [
        [["0.3*x1 + 0.2*p2", "0.1*x2*p1"], ["0.1*x2*p1", "0.5 - 0.4*p1*p2"]],
        [["0.2*x1*x2 + p1", "0.25*x1 - 0.1*p2^2"], ["0.25*x1 - 0.1*p2^2", "0.3*x2*p2"]],
    ])


class GradientTests(SimpleTestCase):

    def test_vertical_gradient_of_kinetic_energy(self):
        field = ExtendedTensorField.scalar(2, "(p1^2 + p2^2) / 2")
        grad = vertical_gradient(field)
        self.assertEqual(grad.kinds, 'u')
        self.assertEqual(grad.valence, (1, 0))
        np.testing.assert_allclose(grad.evaluate([0.3, 0.1], [1.5, -2.0]), [1.5, -2.0])

    def test_vertical_gradient_of_omega(self):
        grad = vertical_gradient(ExtendedTensorField.scalar(2, "p1^2 + p2^2"))
        np.testing.assert_allclose(grad.evaluate([0, 0], [1.5, -2.0]), [3.0, -4.0])

    def test_velocity_vertical_gradient_adds_lower_index(self):
        field = ExtendedTensorField.scalar(2, "v1*v2", representation=VELOCITY)
        self.assertEqual(vertical_gradient(field).valence, (0, 1))

    def test_horizontal_gradient_of_x_free_scalar_vanishes(self):
        field = ExtendedTensorField.scalar(2, "p1^2 * p2")
        grad = horizontal_gradient(field, ExtendedConnection.flat(2))
        np.testing.assert_allclose(grad.evaluate([0.4, 0.2], [1.0, 2.0]), [0.0, 0.0])

    def test_symbolic_gradient_matches_numeric_jets(self):
        gamma = polynomial_connection()
        H = HamiltonianModel.from_expression(2, PENDULUM_H)
        field = ExtendedTensorField.scalar(2, PENDULUM_H)
        c = CotangentState([0.3, -0.2], [0.7, 1.1])
        _, horizontal = hamiltonian_gradient_jets(H.evaluate(c, order=2), gamma.jet(c.x, c.p), c.p)
        symbolic = horizontal_gradient(field, gamma).evaluate(c.x, c.p)
        np.testing.assert_allclose(symbolic, horizontal.value, atol=1e-12)

        second = horizontal_gradient(horizontal_gradient(field, gamma), gamma)
        self.assertEqual(second.kinds, 'll')

    def test_representation_mismatch(self):
        field = ExtendedTensorField.scalar(2, "v1^2", representation=VELOCITY)
        with self.assertRaises(RepresentationMismatch):
            horizontal_gradient(field, ExtendedConnection.flat(2))

    def test_valence_must_match_shape(self):
        with self.assertRaises(ValueError):
            ExtendedTensorField(2, ["p1", "p2"], 'uu')


class RepresentationTests(SimpleTestCase):

    def test_momentum_field_composed_with_legendre(self):
        L = LagrangianModel(2, "(v1^2 + v2^2)^2 / 4")
        field = ExtendedTensorField(2, ["p1*x2", "p2"], 'l')
        pulled = convert_representation(field, L)
        self.assertEqual(pulled.representation, VELOCITY)
        np.testing.assert_allclose(pulled.evaluate([0.0, 2.0], [2.0, 0.0]), [16.0, 0.0])

    def test_velocity_field_through_hamiltonian_expression(self):
        L = LagrangianModel(2, "(v1^2 + v2^2) / 2")
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2", L)
        field = ExtendedTensorField.scalar(2, "v1 * v2", representation=VELOCITY)
        pushed = convert_representation(field, L, H)
        self.assertEqual(pushed.representation, MOMENTUM)
        self.assertAlmostEqual(float(pushed.evaluate([0, 0], [3.0, 4.0])), 12.0)

    def test_velocity_field_through_inverse_legendre(self):
        L = LagrangianModel(2, "(v1^2 + v2^2)^2 / 4")
        field = ExtendedTensorField.scalar(2, "v1 + v2", representation=VELOCITY)
        pushed = convert_representation(field, L)
        self.assertAlmostEqual(float(pushed.evaluate([0.0, 0.0], [8.0, 0.0])), 2.0, places=9)


class ProjectorAndCurvatureTests(SimpleTestCase):

    def test_euclidean_projector(self):
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2")
        P = projector(H, CotangentState([0.5, 0.5], [0.0, 1.0]))
        np.testing.assert_allclose(P.P, [[1.0, 0.0], [0.0, 0.0]])
        np.testing.assert_allclose(P.apply_covector(np.array([0.0, 1.0])), [0.0, 0.0])
        self.assertLessEqual(P.idempotency_error, 1e-15)

    def test_projector_needs_momentum(self):
        H = HamiltonianModel.from_expression(2, "(p1^2 + p2^2) / 2")
        with self.assertRaises(ZeroMomentum):
            projector(H, CotangentState([0.0, 0.0], [0.0, 0.0]))

    def test_flat_connection_has_no_curvature(self):
        pair = curvature_tensors(ExtendedConnection.flat(3), CotangentState([0, 0, 0], [1, 2, 3]))
        self.assertFalse(np.any(pair.D))
        self.assertFalse(np.any(pair.R))

    def test_flat_detection(self):
        self.assertTrue(ExtendedConnection.flat(3).is_flat)
        self.assertTrue(ExtendedConnection(2, [[["0", "0"], ["0", "0"]], [["0", "0"], ["0", "0"]]]).is_flat)
        self.assertFalse(polynomial_connection().is_flat)
        self.assertFalse(random_connection(3, seed=1).is_flat)

    def test_constant_connection_curvature(self):
        raw = [[["1", "2"], ["2", "0"]], [["0", "1"], ["1", "3"]]]
        gamma = ExtendedConnection(2, raw)
        pair = curvature_tensors(gamma, CotangentState([0.1, 0.2], [1.0, -1.0]))
        G = np.array([[[1, 2], [2, 0]], [[0, 1], [1, 3]]], dtype=float)
        expected = np.einsum('kim,mjr->krij', G, G) - np.einsum('kjm,mir->krij', G, G)
        self.assertFalse(np.any(pair.D))
        np.testing.assert_allclose(pair.R, expected)

    def test_connection_must_be_symmetric(self):
        with self.assertRaises(ValueError):
            ExtendedConnection(2, [[["0", "1"], ["0", "0"]], [["0", "0"], ["0", "0"]]])

    def test_connection_in_velocity(self):
        L = LagrangianModel(2, "(v1^2 + v2^2)^2 / 4")
        gamma = ExtendedConnection(2, [[["p1", "0"], ["0", "x2"]], [["0", "0"], ["0", "0"]]])
        composed = gamma.in_velocity(L)
        self.assertEqual(composed.representation, VELOCITY)
        q = TangentState([0.0, 0.5], [2.0, 0.0])
        np.testing.assert_allclose(composed.values(q.x, q.v)[0], [[8.0, 0.0], [0.0, 0.5]])
        self.assertIs(composed.in_velocity(L), composed)


class CommutatorTests(SimpleTestCase):

    def test_flat_connection_gives_exact_zero(self):
        H = HamiltonianModel.from_expression(2, PENDULUM_H)
        spatial, mixed = commutator_residual(H, ExtendedConnection.flat(2), CotangentState([0.2, 0.1], [1.0, 0.5]))
        self.assertFalse(np.any(spatial))
        self.assertFalse(np.any(mixed))

    def test_identities_hold_for_polynomial_connections(self):
        H = HamiltonianModel.from_expression(2, PENDULUM_H)
        rng = np.random.default_rng(77)
        points = Domain(((-1.0, 1.0),) * 2, (0.5, 2.0)).sample_cotangent(rng, 50)
        for gamma in (polynomial_connection(), random_connection(2, 13)):
            for c in points:
                spatial, mixed = commutator_residual(H, gamma, c)
                self.assertLessEqual(np.max(np.abs(spatial)), 1e-8)
                self.assertLessEqual(np.max(np.abs(mixed)), 1e-8)


class ConcordanceTests(SimpleTestCase):

    def test_euclidean_flat_is_concordant(self):
        L = LagrangianModel(2, "(v1^2 + v2^2) / 2")
        C = concordance_residual(L, ExtendedConnection.flat(2), TangentState([0.3, 0.4], [1.0, 2.0]))
        np.testing.assert_allclose(C, np.zeros((2, 2)))

    def test_position_dependent_metric_is_not(self):
        L = LagrangianModel(2, "((1 + x1^2) * v1^2 + v2^2) / 2")
        C = concordance_residual(L, ExtendedConnection.flat(2), TangentState([0.5, 0.0], [1.0, 1.0]))
        self.assertAlmostEqual(C[0, 0], 1.0)

    def test_momentum_form_is_the_raised_residual(self):
        L = LagrangianModel(2, "((1 + x1^2) * v1^2 + v2^2) / 2 + (v1^2 + v2^2)^2 / 8")
        H = HamiltonianModel.from_lagrangian(L)
        gamma = random_connection(2, 4)
        for q in Domain(((-1.0, 1.0),) * 2, (0.5, 2.0)).sample_tangent(np.random.default_rng(4), 10):
            C = concordance_residual(L, gamma, q)
            g_inv = invert_metric(L.partial('L_vv', q.x, q.v))
            M = concordance_residual_momentum(H, gamma, CotangentState(q.x, L.momentum(q.x, q.v)))
            np.testing.assert_allclose(M, -C @ g_inv, atol=1e-8)

    def test_representation_defect_vanishes(self):
        L = LagrangianModel(2, "((1 + x1^2) * v1^2 + v2^2) / 2")
        gamma = random_connection(2, 21)
        fields = (
            ExtendedTensorField.scalar(2, "p1^2*x2 + sin(x1)*p2"),
            ExtendedTensorField(2, ["p1*p2", "x1*p2^2"], 'u'),
        )
        q = TangentState([0.3, -0.6], [0.9, 0.4])
        for field in fields:
            np.testing.assert_allclose(representation_defect(field, L, gamma, q), 0.0, atol=1e-10)


class CovariantTimeDerivativeTests(SimpleTestCase):

    def setUp(self):
        self.t = np.linspace(0.0, 1.0, 11)
        self.base = np.stack([self.t, np.zeros_like(self.t)], axis=1)
        self.fiber = np.tile([1.0, 0.0], (11, 1))

    def test_constant_series(self):
        series = np.tile([2.0, -1.0], (11, 1))
        result = covariant_time_derivative(self.t, self.base, self.fiber, series, ExtendedConnection.flat(2), 'u')
        np.testing.assert_allclose(result, 0.0)

    def test_linear_series(self):
        series = np.stack([3 * self.t, -self.t], axis=1)
        result = covariant_time_derivative(self.t, self.base, self.fiber, series, ExtendedConnection.flat(2), 'l')
        np.testing.assert_allclose(result[1:-1], np.tile([3.0, -1.0], (9, 1)), atol=1e-12)

    def test_needs_three_samples(self):
        with self.assertRaises(InsufficientSamples):
            covariant_time_derivative(self.t[:2], self.base[:2], self.fiber[:2], self.base[:2],
                                      ExtendedConnection.flat(2), 'u')

    def test_needs_uniform_grid(self):
        t = np.array([0.0, 0.1, 0.3])
        with self.assertRaises(ValueError):
            covariant_time_derivative(t, self.base[:3], self.fiber[:3], self.base[:3], ExtendedConnection.flat(2), 'u')
