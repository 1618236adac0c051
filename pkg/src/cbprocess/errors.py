"""Exception hierarchy shared by all modules."""


class CBError(Exception):
    """Base class for errors raised by cbprocess."""

    rule = "error"

    def to_dict(self):
        return {"error": type(self).__name__, "rule": self.rule, "message": str(self)}


class InvalidMechanismError(CBError):
    rule = "invalid mechanism"

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)

    def to_dict(self):
        d = super().to_dict()
        d["violations"] = [v.to_dict() for v in self.violations]
        if self.violations:
            d["rule"] = self.violations[0].rule
        return d


class DomainError(CBError):
    """An argument lies outside the closed left half-plane or the positive orthant."""

    rule = "domain"


class ConfigError(CBError):
    rule = "invalid config"


class QuadratureError(CBError):
    rule = "quadrature non-convergence"

    def __init__(self, message, error_estimate):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3e})")
        self.error_estimate = error_estimate


class DomainEscapeError(CBError):
    rule = "domain escape"

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class StepSizeUnderflowError(CBError):
    rule = "step-size underflow"

    def __init__(self, message, last_time):
        super().__init__(message)
        self.last_time = last_time


class OscillatoryWarning(UserWarning):
    """Quadrature on the imaginary axis did not reach the requested tolerance."""
