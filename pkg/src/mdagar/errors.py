"""Exception hierarchy shared by every module."""


class MdagarError(Exception):
    """Base class for errors raised by mdagar."""


class ValidationError(MdagarError, ValueError):
    """Bad input: malformed files, inconsistent shapes, out-of-support values."""


class NumericalError(MdagarError, ArithmeticError):
    """A factorization or iteration failed numerically."""


class GraphError(ValidationError):
    pass


class AdjacencyFormatError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class UnknownLabelError(GraphError):
    pass


class EmptyGraphError(GraphError):
    pass
