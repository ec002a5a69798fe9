"""
Error hierarchy for the geometry library.

Every error can carry a small context dict (failing time, grid index, the
offending quantity) so callers further up can report where a computation
broke without re-wrapping the exception.
"""


class GeometryError(Exception):
    """Base class for all errors raised by the geometry library."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = dict(context)

    def with_context(self, **context):
        # Inner context wins; it is closer to the failure.
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def __str__(self):
        base = super().__str__()
        if not self.context:
            return base
        details = ", ".join(f"{key}={value}" for key, value in sorted(self.context.items()))
        return f"{base} ({details})"


# --- EXPRESSIONS ---

class UnknownSymbol(GeometryError):
    pass


class ExpressionParseError(GeometryError):
    def __init__(self, message, column=None, **context):
        super().__init__(message, **context)
        self.column = column


# --- NUMERIC FAILURES ---

class NumericFailure(GeometryError):
    """A computation was well posed but could not be carried out numerically."""


class NonConvergence(NumericFailure):
    pass


class SingularJacobian(NumericFailure):
    pass


class DegenerateOmega(NumericFailure):
    pass


class ZeroMomentum(NumericFailure):
    pass


class ZeroNu(NumericFailure):
    pass


class VanishingNu(NumericFailure):
    pass


class RankDeficient(NumericFailure):
    pass


class InsufficientSamples(NumericFailure):
    pass


# --- MISUSE ---

class RepresentationMismatch(GeometryError):
    pass


class DimensionTooSmall(GeometryError):
    pass
