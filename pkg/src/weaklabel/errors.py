"""Exception hierarchy.

Every domain failure raised by the library derives from :class:`WeakLabelError`
so callers (and the CLI) can separate modelling failures from programming
errors.  Input/parse problems derive from :class:`InputError`.
"""


class WeakLabelError(Exception):
    """Base class for all domain failures."""


class InputError(WeakLabelError, ValueError):
    """Malformed user input (files, graphs, label cells)."""


# task structure
class InvalidTaskGraph(InputError):
    pass


class FeasibleSetTooLarge(WeakLabelError):
    pass


class NoFeasibleCompletion(WeakLabelError):
    pass


# dependency graph
class InvalidSourceGraph(InputError):
    pass


class NonSingletonSeparators(WeakLabelError):
    pass


class EmptyOmega(WeakLabelError):
    pass


class NotIdentifiable(WeakLabelError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnsupportedStructure(WeakLabelError):
    """The requested model lies outside what the rank-one estimator handles."""


# statistics
class LayoutTooLarge(WeakLabelError):
    pass


class InvalidCell(InputError):
    pass


class DegenerateCovariance(WeakLabelError):
    def __init__(self, message, coordinates=()):
        super().__init__(message)
        self.coordinates = tuple(coordinates)


# solver
class SingularCovariance(WeakLabelError):
    pass


class DidNotConverge(WeakLabelError):
    pass


class AmbiguousSigns(WeakLabelError):
    pass


class NegativeC(WeakLabelError):
    pass


class InvalidProbability(WeakLabelError):
    pass


# class balance
class NotConditionallyIndependent(WeakLabelError):
    pass


class InsufficientRows(WeakLabelError):
    pass


class DecompositionFailed(WeakLabelError):
    pass


class NonPositiveBalance(WeakLabelError):
    pass


# inference / synthetic
class MissingParameter(WeakLabelError):
    pass


class SupportTooLarge(WeakLabelError):
    pass


__all__ = [
    "WeakLabelError",
    "InputError",
    "InvalidTaskGraph",
    "FeasibleSetTooLarge",
    "NoFeasibleCompletion",
    "InvalidSourceGraph",
    "NonSingletonSeparators",
    "EmptyOmega",
    "NotIdentifiable",
    "UnsupportedStructure",
    "LayoutTooLarge",
    "InvalidCell",
    "DegenerateCovariance",
    "SingularCovariance",
    "DidNotConverge",
    "AmbiguousSigns",
    "NegativeC",
    "InvalidProbability",
    "NotConditionallyIndependent",
    "InsufficientRows",
    "DecompositionFailed",
    "NonPositiveBalance",
    "MissingParameter",
    "SupportTooLarge",
]
