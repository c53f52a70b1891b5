"""Exception hierarchy shared by every liftpd module."""


class LiftPDError(Exception):
    """Base class for all errors raised by liftpd."""


class ParseError(LiftPDError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TimingError(LiftPDError):
    pass


class EmptyInputError(LiftPDError):
    pass


class SensorSelectionError(LiftPDError):
    pass


class DegenerateChannelError(LiftPDError):
    pass


class TooShortError(LiftPDError):
    pass


class LabelContractError(LiftPDError):
    pass


class ShapeError(LiftPDError):
    pass


class ConfigError(LiftPDError):
    pass


class DataError(LiftPDError):
    """Training or evaluation data violates a precondition (e.g. single class)."""


class MetricsError(LiftPDError):
    pass


class CheckpointError(LiftPDError):
    """Checkpoint file could not be decoded."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointDigestError(CheckpointError):
    pass
