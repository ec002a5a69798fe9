"""
Coordinate expressions.

All coordinate functions of the lab (L(x, v), H(x, p), Q_i, Γ^k_ij and the
chart maps of hypersurfaces) enter through one infix grammar:

    real constants, symbols x1..xn, v1..vn, p1..pn, y1..ym,
    + - * / and ^ (or **), sqrt, exp, log, sin, cos, pi, E.

Parsing and exact differentiation are delegated to sympy; numeric evaluation
goes through lambdified numpy functions that are built once per expression
array and cached.
"""
import logging
import re
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

from .exceptions import ExpressionParseError, UnknownSymbol

logger = logging.getLogger(__name__)

SYMBOL_PATTERN = re.compile(r'^(x|v|p|y)([1-9][0-9]*)$')
IDENTIFIER_PATTERN = re.compile(r'[A-Za-z_][A-Za-z_0-9]*')
ALLOWED_CHARACTERS = re.compile(r'^[0-9A-Za-z_+\-*/^().\s]*$')

FUNCTIONS = {'sqrt': sympy.sqrt, 'exp': sympy.exp, 'log': sympy.log, 'sin': sympy.sin, 'cos': sympy.cos}
CONSTANTS = {'pi': sympy.pi, 'E': sympy.E}
ALLOWED_FUNCTION_TYPES = (sympy.exp, sympy.log, sympy.sin, sympy.cos)

TRANSFORMATIONS = standard_transformations + (convert_xor,)


def symbol(name):
    """Return the sympy symbol for a coordinate name such as ``x1`` or ``p3``."""
    if not SYMBOL_PATTERN.match(name):
        raise UnknownSymbol(f"'{name}' is not a coordinate symbol", symbol=name)
    return sympy.Symbol(name)


def symbols(prefix, count):
    return tuple(symbol(f'{prefix}{i}') for i in range(1, count + 1))


@dataclass(frozen=True)
class Coordinates:
    """The symbol sets used in dimension n."""
    n: int

    @cached_property
    def x(self):
        return symbols('x', self.n)

    @cached_property
    def v(self):
        return symbols('v', self.n)

    @cached_property
    def p(self):
        return symbols('p', self.n)

    @cached_property
    def y(self):
        return symbols('y', self.n - 1)

    def fiber(self, representation):
        return self.p if representation == 'momentum' else self.v


def _check_identifiers(text):
    for match in IDENTIFIER_PATTERN.finditer(text):
        name = match.group(0)
        if name in FUNCTIONS or name in CONSTANTS or SYMBOL_PATTERN.match(name):
            continue
        raise ExpressionParseError(
            f"unknown name '{name}' in expression '{text}'",
            column=match.start() + 1,
        )


@dataclass(frozen=True)
class Expression:
    """An immutable coordinate expression with exact partial derivatives."""
    expr: sympy.Expr

    @classmethod
    def parse(cls, text):
        if not isinstance(text, str):
            # Plain numbers are accepted where an expression is expected.
            if isinstance(text, (int, float)) and not isinstance(text, bool):
                return cls(sympy.Float(text) if isinstance(text, float) else sympy.Integer(text))
            raise ExpressionParseError(f"expected an expression string, got {type(text).__name__}")

        if not text.strip():
            raise ExpressionParseError("empty expression", column=1)
        if not ALLOWED_CHARACTERS.match(text):
            bad = next(i for i, ch in enumerate(text) if not ALLOWED_CHARACTERS.match(ch))
            raise ExpressionParseError(f"unexpected character '{text[bad]}'", column=bad + 1)
        _check_identifiers(text)

        local_dict = dict(FUNCTIONS)
        local_dict.update(CONSTANTS)
        for match in IDENTIFIER_PATTERN.finditer(text):
            name = match.group(0)
            if SYMBOL_PATTERN.match(name):
                local_dict[name] = sympy.Symbol(name)

        try:
            parsed = parse_expr(text, local_dict=local_dict, transformations=TRANSFORMATIONS)
        except SyntaxError as exc:
            raise ExpressionParseError(f"cannot parse '{text}': {exc.msg}", column=exc.offset) from exc
        except Exception as exc:  # tokenize errors, bad calls like sin()
            column = None
            if len(exc.args) > 1 and isinstance(exc.args[1], tuple):
                column = exc.args[1][1]
            raise ExpressionParseError(f"cannot parse '{text}': {exc}", column=column) from exc

        return cls.from_sympy(parsed, source=text)

    @classmethod
    def from_sympy(cls, value, source=None):
        value = sympy.sympify(value)
        if not isinstance(value, sympy.Expr):
            raise ExpressionParseError(f"'{source or value}' is not a scalar expression")
        if value.has(sympy.I) or value.has(sympy.zoo) or value.has(sympy.nan):
            raise ExpressionParseError(f"'{source or value}' is not real-valued")
        for func in value.atoms(sympy.Function):
            if not isinstance(func, ALLOWED_FUNCTION_TYPES):
                raise ExpressionParseError(f"function '{func.func}' is not supported")
        for sym in value.free_symbols:
            if not SYMBOL_PATTERN.match(sym.name):
                raise UnknownSymbol(f"'{sym.name}' is not a coordinate symbol", symbol=sym.name)
        return cls(value)

    # --- calculus ---

    def differentiate(self, name):
        target = symbol(name) if isinstance(name, str) else name
        if not SYMBOL_PATTERN.match(target.name):
            raise UnknownSymbol(f"'{target.name}' is not a coordinate symbol", symbol=target.name)
        return Expression(sympy.diff(self.expr, target))

    @property
    def symbol_names(self):
        return sorted(sym.name for sym in self.expr.free_symbols)

    @cached_property
    def _compiled(self):
        ordered = sorted(self.expr.free_symbols, key=lambda s: s.name)
        return ordered, sympy.lambdify(ordered, self.expr, modules='numpy')

    def evaluate(self, assignment):
        """Evaluate at a mapping of symbol name to number."""
        ordered, func = self._compiled
        try:
            values = [assignment[s.name] for s in ordered]
        except KeyError as exc:
            raise UnknownSymbol(f"no value given for symbol {exc.args[0]}", symbol=exc.args[0]) from exc
        return float(func(*values))

    def __str__(self):
        return str(self.expr)


def differentiate(e, s):
    """Exact partial derivative of an Expression with respect to symbol ``s``."""
    return e.differentiate(s)


class CompiledArray:
    """
    A sympy array of expressions compiled into one numpy callable.

    Calling it with positional coordinate vectors (e.g. ``x, p``) returns a
    float ndarray with the array's shape.
    """

    def __init__(self, components, groups):
        self.components = sympy.Array(components) if not isinstance(components, sympy.Expr) else components
        self.shape = () if isinstance(self.components, sympy.Expr) else self.components.shape
        self.arguments = [s for group in groups for s in group]
        self._sizes = [len(group) for group in groups]
        payload = self.components if self.shape == () else self.components.tolist()
        self._func = sympy.lambdify(self.arguments, payload, modules='numpy')

    def __call__(self, *vectors):
        flat = []
        for vector, size in zip(vectors, self._sizes):
            values = np.asarray(vector, dtype=float).reshape(-1)
            if values.shape[0] != size:
                raise ValueError(f"expected {size} coordinates, got {values.shape[0]}")
            flat.extend(values.tolist())
        return np.asarray(self._func(*flat), dtype=float).reshape(self.shape)


def derivative_array(components, variables):
    """
    Partial derivatives of an expression array, derivative index last.

    ``components`` may be a scalar sympy expression or a sympy Array.
    """
    derived = sympy.derive_by_array(components, list(variables))
    if isinstance(components, sympy.Expr) or getattr(components, 'rank', lambda: 0)() == 0:
        return derived
    # derive_by_array puts the new index first; move it to the end.
    rank = derived.rank()
    return sympy.permutedims(derived, list(range(1, rank)) + [0])
