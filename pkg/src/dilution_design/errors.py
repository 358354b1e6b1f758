"""Exception hierarchy.

Every exception carries a stable ``code`` string; the CLI emits it in its
JSON error payload so scripts can branch on it.
"""


class DesignError(Exception):
    code = "design_error"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidMeasureError(DesignError, ValueError):
    code = "invalid_measure"


class InvalidPriorError(DesignError, ValueError):
    code = "invalid_prior"


class InvalidCriterionError(DesignError, ValueError):
    code = "invalid_criterion"


class QuadratureError(DesignError, ArithmeticError):
    """An expectation over the prior did not converge to the requested tolerance."""

    code = "quadrature_nonconvergence"


class DivergenceError(QuadratureError):
    """The expectation is infinite (e.g. E exp(lambda x) with x >= beta)."""

    code = "divergent_expectation"


class DegenerateInformationError(DesignError, ArithmeticError):
    code = "degenerate_information"


class InfeasibleError(DesignError, ValueError):
    code = "infeasible"


class RoundingError(DesignError, ValueError):
    code = "rounding_failed"


class BracketError(DesignError, RuntimeError):
    code = "bracket_failure"


class InvalidArgumentError(DesignError, ValueError):
    code = "invalid_argument"
