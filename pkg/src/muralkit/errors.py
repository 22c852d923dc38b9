"""Exception types shared across the package."""


class MuralError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(MuralError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class DecodeError(MuralError):
    """PNG byte stream could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class StateError(MuralError):
    """An operation was invoked in an invalid state (e.g. missing cache)."""


class CheckpointError(MuralError):
    """Checkpoint file is malformed or misses required tensors.

    ``missing`` lists tensor names that were expected but absent.
    """

    def __init__(self, message: str, missing: list[str] | None = None):
        if missing:
            message = f"{message}: {', '.join(sorted(missing))}"
        super().__init__(message)
        self.missing = missing or []


class GenerationError(MuralError):
    """Mask synthesis could not reach the requested coverage."""


class NonFiniteError(MuralError):
    """A loss or gradient became NaN/Inf; carries the offending name."""

    def __init__(self, message: str, name: str = ""):
        super().__init__(message if not name else f"{message}: {name}")
        self.name = name
