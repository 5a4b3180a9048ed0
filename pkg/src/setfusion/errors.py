"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Tensor extents do not satisfy an operation's shape contract."""


class ContractError(ValueError):
    """A precondition other than a shape constraint was violated."""


class NumericOverflowError(ArithmeticError):
    """An elementwise transform left the 64-bit float range."""


class GenerationError(RuntimeError):
    """Procedural sample generation exhausted its rejection budget."""


class FormatError(ValueError):
    """A binary file failed validation. Carries the offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
