"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class InputError(ValueError):
    """Malformed or inconsistent input data (files, corpora, arguments)."""


class FormatError(InputError):
    """A serialized file has a bad header, magic or version."""


class CompatibilityError(ValueError):
    """A checkpoint does not match the requested architecture."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
