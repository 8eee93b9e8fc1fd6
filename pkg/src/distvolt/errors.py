"""Exception types shared across the package."""


class DistvoltError(Exception):
    """Base class for all package errors."""


class NotATree(DistvoltError):
    """Line list does not form a tree rooted at the substation bus."""


class NonPositiveReactance(DistvoltError):
    """A line has x <= 0."""


class NonHomogeneous(DistvoltError):
    """r/x ratios differ but an exact common ratio was requested."""


class DimensionMismatch(DistvoltError):
    """Vector length does not match the bus count."""


class EmptyRegion(DistvoltError):
    """A bus feasible set (box intersected with disk) is empty."""


class StepSizeTooLarge(DistvoltError):
    """A solver parameter violates one of its admissibility conditions."""


class GammaNotPositiveDefinite(DistvoltError):
    """The step-size metric matrix is not positive definite."""


class SingularSystem(DistvoltError):
    """A linear solve inside an operator evaluation failed."""


class PropertyViolated(DistvoltError):
    """A sampled operator inequality failed beyond tolerance.

    Carries the witness pair so the failure can be reproduced.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class StaleBeyondChi(DistvoltError):
    """A cache read returned data older than the staleness bound."""


class MissingMeasurement(DistvoltError):
    """A measurement frame lacks a value the estimator needs."""


class ConfigError(DistvoltError):
    """Scenario configuration file is invalid."""
