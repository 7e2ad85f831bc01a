class UavNomaError(Exception):
    """Base class for package errors."""


class InvalidInput(UavNomaError, ValueError):
    pass


class ScenarioError(InvalidInput):
    """Scenario document failed schema or invariant checks."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(UavNomaError, ValueError):
    pass


class SingularityError(DomainError):
    pass


class DegenerateGeometry(UavNomaError, ValueError):
    pass


class RegionViolation(UavNomaError):
    """An SCA expansion point lies outside the DEP convexity region."""

    def __init__(self, component, conditions):
        self.component = component
        self.conditions = list(conditions)
        super().__init__(f"{component} outside convexity region: " + "; ".join(self.conditions))


class NumericalFailure(UavNomaError, ArithmeticError):
    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class ConsistencyError(UavNomaError, AssertionError):
    pass


class InfeasibleBlocklength(UavNomaError):
    def __init__(self, binding):
        self.binding = binding
        super().__init__(f"no feasible blocklength pair: {binding}")


class Infeasible(UavNomaError):
    def __init__(self, check):
        self.check = check
        super().__init__(f"infeasible scenario: {check}")
