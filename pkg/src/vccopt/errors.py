"""Exception hierarchy shared across the package."""


class VccError(Exception):
    """Base class for all package errors."""


class ValidationError(VccError):
    """An input (fleet, scenario, allocation) violates a documented invariant."""


class DisconnectedGraph(ValidationError):
    pass


class InvalidEdgeEndpoint(ValidationError):
    pass


class NegativePrice(ValidationError):
    pass


class ParseError(VccError):
    """Malformed scenario or CSV file."""


class MissingColumn(ParseError):
    pass


class TooFewRows(ParseError):
    pass


class NegativeIntensity(ValidationError):
    pass


class AmplitudeOutOfRange(ValidationError):
    pass


class BudgetInfeasible(ValidationError):
    pass


class InfeasibleEqualities(VccError):
    pass


class SolverError(VccError):
    """Base class for numerical solver failures."""


class Infeasible(SolverError):
    """The allocation set is certified empty for the given capacities."""


class SolverFailure(SolverError):
    pass


class NotSolved(SolverError):
    pass


class EmptyX(SolverError):
    pass


class NonFiniteObjective(SolverError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InfeasibleAllocation(ValidationError):
    pass
