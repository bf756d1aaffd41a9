"""Domain exceptions raised across the leakguard pipeline.

Each exception subclasses the builtin type a caller would naturally catch, so
`except ValueError` keeps working while the pipeline can still tell the failure
modes apart.
"""


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class ParameterError(ValueError):
    """Raised when a scalar argument is outside its valid range."""


class GradientStateError(RuntimeError):
    """Raised when an optimizer step is requested for a parameter with no gradient."""


class CapacityError(ValueError):
    """Raised when more unique items are requested than a pool can supply."""


class ConsistencyError(ValueError):
    """Raised when two datasets disagree about something they must share."""


class InputError(ValueError):
    """Raised when model input is malformed (unknown token, too long, bad layer)."""


class UnknownDocumentError(KeyError):
    """Raised when a document id is not present in an activation cache."""


class DataError(ValueError):
    """Raised when training data cannot support the requested fit."""


class DegenerateProbeError(ValueError):
    """Raised when a probe's weight vector has zero norm."""


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite.

    Attributes:
        step (int): The optimizer step at which the loss diverged.
    """

    def __init__(self, what: str, step: int) -> None:
        """Initializes the error with the name of the run and the failing step.

        Args:
            what (str): Which training run diverged.
            step (int): The optimizer step index.
        """
        super().__init__(f"{what} diverged (non-finite loss) at step {step}")
        self.step = step


class ConfigurationError(ValueError):
    """Raised when a configuration is missing a dependency or is inconsistent."""


class StaleArtifactError(RuntimeError):
    """Raised when an upstream artifact is missing or was produced by another config.

    Attributes:
        stage (str): The stage that must be re-run.
    """

    def __init__(self, stage: str, reason: str) -> None:
        """Initializes the error.

        Args:
            stage (str): The stage that must be re-run.
            reason (str): What was found to be stale.
        """
        super().__init__(f"{reason}; re-run `{stage}`")
        self.stage = stage


class StageLockedError(RuntimeError):
    """Raised when another stage process holds the stage directory lock."""


class ArtifactExistsError(FileExistsError):
    """Raised when a stage would overwrite its outputs without --force."""
