"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not agree."""


class ContractError(ValueError):
    """A documented precondition was violated."""


class GraphStateError(RuntimeError):
    """Backward requested on a graph that was already consumed."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class DegeneratePoseError(ContractError):
    """Neck and pelvis coincide, so the torso length is zero."""


class GenerationError(RuntimeError):
    """The synthetic scene generator cannot satisfy its configuration."""


class FormatError(ValueError):
    """A binary file does not follow the expected layout."""
