class NeuroAttitudeError(Exception):
    """Base error; ``exit_code`` is what the management commands return."""

    exit_code = 1


class ConfigurationError(NeuroAttitudeError, ValueError):
    exit_code = 2


class MissingInputError(NeuroAttitudeError, FileNotFoundError):
    exit_code = 3


class CorruptParameterFileError(NeuroAttitudeError):
    exit_code = 4


class DatasetSchemaError(NeuroAttitudeError):
    exit_code = 5


class NonFiniteInputError(NeuroAttitudeError, ValueError):
    def __init__(self, channel: int, value: float):
        self.channel = channel
        self.value = value
        super().__init__(f"Non-finite value {value!r} in input channel {channel}")


class UnobservableError(NeuroAttitudeError, ValueError):
    """Accelerometer norm too small to define a tilt."""


class QuantizationError(NeuroAttitudeError, ValueError):
    pass


class NonFiniteStateError(NeuroAttitudeError, ArithmeticError):
    def __init__(self, timestep: int, layer: str):
        self.timestep = timestep
        self.layer = layer
        super().__init__(f"Non-finite state in {layer} layer at timestep {timestep}")


class NonFiniteGradientError(NeuroAttitudeError, ArithmeticError):
    def __init__(self, block: str, timestep: int):
        self.block = block
        self.timestep = timestep
        super().__init__(
            f"Non-finite gradient in parameter block '{block}' (timestep {timestep})"
        )


class TrainingDivergedError(NeuroAttitudeError, ArithmeticError):
    pass


class PruningError(NeuroAttitudeError, ValueError):
    pass


class InsufficientDataError(NeuroAttitudeError, ValueError):
    pass


class TaskFailedError(NeuroAttitudeError):
    """A background task failure carried back with the exit code of its cause."""

    def __init__(self, message: str, exit_code: int = 1):
        self.exit_code = exit_code
        super().__init__(message)
