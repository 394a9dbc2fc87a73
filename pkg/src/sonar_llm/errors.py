class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(ValueError):
    """A configuration object failed validation."""


class CheckpointFormatError(ValueError):
    """A checkpoint file is truncated, corrupt, or of an unknown version."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during optimisation."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss!r}) at step {step}")
        self.step = step
        self.loss = loss
