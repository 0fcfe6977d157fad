"""Exception hierarchy.

Two roots so the CLI can map failures to exit codes: ``InputError`` for
malformed or out-of-domain inputs (exit 1) and ``NumericalError`` for
algorithms that could not deliver a result (exit 2).
"""


class CollocationError(Exception):
    pass


class InputError(CollocationError, ValueError):
    pass


class NumericalError(CollocationError, ArithmeticError):
    pass


# core
class DegenerateLeadingCoefficient(InputError):
    pass


class UnsupportedDegree(InputError):
    pass


class InversionFailure(NumericalError):
    pass


class NonMonotonicInput(InversionFailure):
    pass


class NoRealRoot(InversionFailure):
    pass


# pricer
class WrongVariant(InputError):
    pass


class UnsupportedStrike(InputError):
    pass


class NonPositiveAtCutoff(InputError):
    pass


# calibrator
class PriceOutOfBounds(InputError):
    pass


class DegenerateQuotes(InputError):
    pass


class NoConvergence(NumericalError):
    """Optimizer hit its iteration budget. ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InfeasibleMartingale(NumericalError):
    pass


# quadrature / clv
class QuadratureFailure(NumericalError):
    pass


class NonPositiveTime(InputError):
    pass


class PositivityRequired(InputError):
    pass


class NearSingularDenominator(NumericalError):
    pass


class NoRootInUnitInterval(NumericalError):
    pass


class NonPositiveDenominator(NumericalError):
    pass


class BarrierBelowCutoff(InputError):
    pass


# localvol
class OutOfTimeRange(InputError):
    pass


class CalendarArbitrage(NumericalError):
    pass


class ZeroDensity(NumericalError):
    pass


# io
class ParseError(InputError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
