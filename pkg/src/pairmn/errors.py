"""Exception hierarchy shared by every module."""


class PairMNError(Exception):
    """Base class for all errors raised by pairmn."""


class InvalidInput(PairMNError, ValueError):
    """Argument outside the domain of the operation."""


class DegenerateInput(PairMNError, ValueError):
    """Input is well-formed but carries no usable information."""


class InsufficientSamples(PairMNError, ValueError):
    """Too few subjects for the requested estimator or test."""


class InsufficientTests(PairMNError, ValueError):
    """Too few p-values for the requested combination rule."""


class ZeroRank(PairMNError, ArithmeticError):
    """Every eigenvalue was truncated by the pseudoinverse."""


class InvalidTree(PairMNError, ValueError):
    """Node table does not describe a single rooted tree."""


class InvalidNode(PairMNError, ValueError):
    """Node cannot be used for the requested operation (e.g. a leaf)."""


class EmptyReport(PairMNError, RuntimeError):
    """No subtree of the tree could be tested."""
