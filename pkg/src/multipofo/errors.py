"""Exception hierarchy shared by every module."""


class MultipofoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MultipofoError, ValueError):
    pass


class StateError(MultipofoError, RuntimeError):
    pass


class TrainingError(MultipofoError, RuntimeError):
    pass


class ContractError(MultipofoError, RuntimeError):
    pass


class ParseError(MultipofoError, ValueError):
    pass


class ValidationError(MultipofoError, ValueError):
    pass


class FitError(MultipofoError, ValueError):
    pass


class SplitError(MultipofoError, ValueError):
    pass


class WindowError(MultipofoError, ValueError):
    pass


class ConfigError(MultipofoError, ValueError):
    pass


class CheckpointError(MultipofoError, ValueError):
    pass


class UnitError(MultipofoError, ValueError):
    pass


class PipelineError(MultipofoError, RuntimeError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
