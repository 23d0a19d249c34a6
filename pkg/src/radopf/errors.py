"""Exception hierarchy shared by every module."""


class RadOPFError(Exception):
    pass


class ParseError(RadOPFError):
    """Malformed case input. ``path`` is a JSON path such as ``$.buses[1].p_min``."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ValidationError(RadOPFError):
    def __init__(self, report):
        lines = "; ".join(f"{rule} ({elem}): {msg}" for rule, elem, msg in report.violations)
        super().__init__(f"invalid case: {lines}")
        self.report = report


class DimensionMismatch(RadOPFError, ValueError):
    pass


class UnknownEdge(RadOPFError, KeyError):
    pass


class DomainError(RadOPFError, ValueError):
    """A derivative was requested too close to |z| = 1."""


class NotStrictlyFeasible(RadOPFError):
    pass


class NotStrictlyFeasibleStart(NotStrictlyFeasible):
    pass


class NumericalFailure(RadOPFError):
    pass


class InfeasibleError(RadOPFError):
    def __init__(self, message, best_violation=float("nan")):
        super().__init__(message)
        self.best_violation = best_violation


class DegenerateGradient(RadOPFError):
    pass


class ProjectionError(RadOPFError):
    pass


class FeasibilityRegression(RadOPFError):
    pass


class TooLarge(RadOPFError, ValueError):
    pass
