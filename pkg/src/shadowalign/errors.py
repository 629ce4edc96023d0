"""Exception hierarchy shared across the package.

Every error raised on a contract violation derives from ShadowAlignError so
callers (and the CLI) can distinguish our failures from programming errors.
"""


class ShadowAlignError(Exception):
    """Base class for all package errors."""


class ShapeError(ShadowAlignError):
    """Tensor/layer shapes do not compose. Carries the offending layer index."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class NumericError(ShadowAlignError):
    """A non-finite value appeared where finite values are required."""

    def __init__(self, message: str, layer: int | None = None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class TrainingDivergedError(ShadowAlignError):
    """Training produced a non-finite loss. Carries the epoch index."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}: non-finite loss")
        self.epoch = epoch


class CheckpointError(ShadowAlignError):
    """Checkpoint file is malformed, truncated or of an unsupported version."""


class ConfigError(ShadowAlignError):
    """Experiment configuration is missing, malformed or incoherent."""


class ScenarioError(ShadowAlignError):
    """A pipeline stage failed. Carries a stage tag for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
