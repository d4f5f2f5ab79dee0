"""Exception taxonomy shared across the package."""


class TreeSynthError(Exception):
    """Base class for package errors."""


class ConfigError(TreeSynthError):
    """Invalid configuration value; message carries the offending field path."""


class DataShapeError(TreeSynthError):
    """Inputs whose shapes or alignment do not match the declared contract."""


class ValidationError(TreeSynthError):
    """Content-level validation failure (bad probabilities, bad labels, ...)."""


class ArchiveFormatError(TreeSynthError):
    """Unreadable or inconsistent archive container."""


class TruncationError(ArchiveFormatError):
    """Archive file ends before the declared payload does."""


class IncompatibilityError(TreeSynthError):
    """Two archives or configs that cannot be combined (hash mismatch, ...)."""


class NumericalAbort(TreeSynthError):
    """A sampler produced a non-finite value.

    Carries enough context to locate the failure: sweep iteration, the
    sweep step name, and the offending flat index within the updated block.
    """

    def __init__(self, step: str, index, iteration: int | None = None):
        self.step = step
        self.index = index
        self.iteration = iteration
        super().__init__(
            f"non-finite value in step '{step}' at index {index}"
            + (f" (iteration {iteration})" if iteration is not None else "")
        )
