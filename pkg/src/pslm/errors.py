"""Exception types shared across the package."""


class TextTooLongError(ValueError):
    """Text does not fit the region it must be padded into."""


class ContextOverflowError(ValueError):
    """Sequence exceeds the model's maximum context length."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"training diverged at step {step}")


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or inconsistent with the expected config."""
