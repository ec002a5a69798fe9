import numpy as np
import sympy
from django.test import SimpleTestCase

from geometry.exceptions import ExpressionParseError, UnknownSymbol
from geometry.expressions import CompiledArray, Coordinates, Expression, derivative_array, differentiate, symbol


class ExpressionParseTests(SimpleTestCase):

    def test_parses_caret_as_power(self):
        e = Expression.parse("v1^2 + 2*x1")
        self.assertEqual(e.evaluate({'v1': 3.0, 'x1': 1.0}), 11.0)

    def test_plain_numbers_are_expressions(self):
        self.assertEqual(Expression.parse(5).evaluate({}), 5.0)
        self.assertEqual(Expression.parse(0.25).evaluate({}), 0.25)

    def test_functions_and_constants(self):
        e = Expression.parse("sqrt(v1) + exp(0) + log(E) + sin(pi/2) + cos(0)")
        self.assertAlmostEqual(e.evaluate({'v1': 4.0}), 6.0, places=12)

    def test_unknown_name_reports_column(self):
        with self.assertRaises(ExpressionParseError) as ctx:
            Expression.parse("v1 + foo")
        self.assertEqual(ctx.exception.column, 6)

    def test_bad_character_reports_column(self):
        with self.assertRaises(ExpressionParseError) as ctx:
            Expression.parse("v1 $ 2")
        self.assertEqual(ctx.exception.column, 4)

    def test_empty_and_unbalanced(self):
        with self.assertRaises(ExpressionParseError):
            Expression.parse("   ")
        with self.assertRaises(ExpressionParseError):
            Expression.parse("(v1 + 2")

    def test_symbol_names(self):
        self.assertEqual(Expression.parse("x2*p1 + v3").symbol_names, ['p1', 'v3', 'x2'])

    def test_missing_assignment(self):
        with self.assertRaises(UnknownSymbol):
            Expression.parse("x1 + x2").evaluate({'x1': 1.0})


class DifferentiateTests(SimpleTestCase):

    def test_power_rule(self):
        d = differentiate(Expression.parse("v1*v1"), 'v1')
        self.assertEqual(sympy.simplify(d.expr - 2 * symbol('v1')), 0)

    def test_constant(self):
        self.assertEqual(differentiate(Expression.parse("5"), 'x1').expr, 0)

    def test_product_and_independence(self):
        d = differentiate(Expression.parse("v1*v2 + exp(x1)"), 'v1')
        self.assertEqual(d.expr, symbol('v2'))

    def test_rejects_non_coordinate(self):
        with self.assertRaises(UnknownSymbol):
            differentiate(Expression.parse("v1"), 'q1')


class CompiledArrayTests(SimpleTestCase):

    def test_derivative_index_is_last(self):
        coords = Coordinates(2)
        x1, x2 = coords.x
        field = sympy.Array([x1 * x2, x2 ** 2])
        jacobian = CompiledArray(derivative_array(field, coords.x), (coords.x,))
        np.testing.assert_allclose(jacobian([2.0, 3.0]), [[3.0, 2.0], [0.0, 6.0]])

    def test_groups_are_positional(self):
        coords = Coordinates(2)
        compiled = CompiledArray(coords.x[0] * coords.p[1], (coords.x, coords.p))
        self.assertEqual(float(compiled([2.0, 0.0], [0.0, 5.0])), 10.0)

    def test_wrong_length_is_rejected(self):
        coords = Coordinates(2)
        compiled = CompiledArray(coords.x[0], (coords.x,))
        with self.assertRaises(ValueError):
            compiled([1.0, 2.0, 3.0])
