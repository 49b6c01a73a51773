"""Exception hierarchy shared by every gridcheck module."""


class GridcheckError(Exception):
    """Base class for all errors raised by gridcheck."""


class ValidationError(GridcheckError, ValueError):
    """Input data violates a structural invariant (graph, partition, file)."""


class SingularMatrixError(GridcheckError, ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class ConditionNotApplicable(GridcheckError):
    """The hypotheses of a feasibility condition are not met.

    Distinct from a condition that is evaluated and fails: an inapplicable
    condition says nothing about feasibility.
    """

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(nodes)
