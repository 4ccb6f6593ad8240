"""Exception types shared across the package."""


class LabError(Exception):
    """Base class for all errors raised by lmclab."""


class CompatibilityError(LabError, ValueError):
    """Two parameter vectors (or a vector and a model spec) disagree on layout."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class TrainingDivergedError(LabError, FloatingPointError):
    """Loss or parameters became non-finite during optimisation."""

    def __init__(self, step: int, loss: float, stage: str = "train"):
        self.step = step
        self.loss = loss
        self.stage = stage
        super().__init__(f"{stage} diverged at step {step} (loss={loss!r})")


class FormatError(LabError, ValueError):
    """A persisted file is malformed; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigError(LabError, ValueError):
    """Invalid experiment configuration or sweep grid."""


class StageError(LabError, RuntimeError):
    """An experiment stage failed; partial state was persisted."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
