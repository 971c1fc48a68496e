"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible; message names the offending axes."""


class NotAnImageError(ValueError):
    """Raised when bytes cannot be decoded as a supported image.

    ``sniffed_format`` carries the container format guessed from magic bytes
    ("png", "jpeg", ...) or "unknown".
    """

    def __init__(self, message: str, sniffed_format: str = "unknown"):
        super().__init__(message)
        self.sniffed_format = sniffed_format


class ManifestError(ValueError):
    """Raised on manifest validation failure; ``errors`` itemizes every problem found."""

    def __init__(self, errors: list[str]):
        super().__init__("manifest validation failed:\n" + "\n".join(errors))
        self.errors = errors


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step sees NaN/Inf gradients."""

    def __init__(self, param_name: str, max_abs: float):
        super().__init__(
            f"non-finite gradient for parameter {param_name!r} (max |grad| = {max_abs})"
        )
        self.param_name = param_name
        self.max_abs = max_abs


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, batch_index: int, diagnostics: str):
        super().__init__(f"non-finite loss at batch {batch_index}: {diagnostics}")
        self.batch_index = batch_index
        self.diagnostics = diagnostics


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file is missing or malformed."""
