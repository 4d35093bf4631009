"""Exception hierarchy shared by every module of the package."""


class CapacityError(Exception):
    """Base class for all package errors."""


class ParseError(CapacityError):
    """Malformed graph description or command-line input."""


class NotIrreducible(CapacityError):
    """The underlying random walk has more than one communicating class."""


class NotReversible(CapacityError):
    """Rates and measure violate detailed balance."""


class AssumptionViolated(CapacityError):
    """The pair of condensing sites does not satisfy the geometric hypothesis."""


class SpaceTooLarge(CapacityError):
    """Configuration space exceeds the memory budget."""

    def __init__(self, cardinality, budget):
        super().__init__(f"configuration space has {cardinality} states (budget {budget})")
        self.cardinality = cardinality
        self.budget = budget


class SingularSystem(CapacityError):
    """A linear system that should be nonsingular turned out singular."""


class NotAFlow(CapacityError):
    """A flow field fails antisymmetry, support, or divergence requirements."""

    def __init__(self, message, vertex=None):
        super().__init__(message)
        self.vertex = vertex


class BadLambda(CapacityError):
    """Resolvent parameter outside the admissible open interval."""


class Diverged(CapacityError):
    """Truncated series or formulas failed to agree at the configured depth."""


class EventCapExceeded(CapacityError):
    """A simulation replica exceeded its event budget."""


class NoPath(CapacityError):
    """No site path exists between the requested endpoints."""


class SandwichViolated(CapacityError):
    """Thomson bound, exact capacity and Dirichlet bound are out of order."""
