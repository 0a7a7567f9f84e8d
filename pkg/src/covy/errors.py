"""Exception types raised across the package."""


class CovyError(Exception):
    """Base class for every error raised by covy."""


class InputDomainError(CovyError, ValueError):
    """An argument is outside the domain an operation accepts."""


class OutOfMapError(InputDomainError):
    """A pose lies outside the map bounds."""


class ScenarioError(CovyError, ValueError):
    """A scenario file failed to parse or validate.

    ``field`` names the offending entry (``"goal"``, ``"robot.start"``, ...).
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DegenerateScanError(CovyError):
    """Too few valid returns to register two scans."""


class CheckpointError(CovyError):
    """A checkpoint is unreadable or does not match the agent's shapes."""


class TrainingDivergedError(CovyError):
    """A loss became non-finite during training."""

    def __init__(self, record):
        self.record = record
        super().__init__(f"non-finite loss: {record}")
