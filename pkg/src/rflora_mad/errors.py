"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    pass


class InvalidInputError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class DegenerateSignalError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class GradientError(RuntimeError):
    """Trainable parameter without a populated gradient at optimizer time."""


class ModeError(RuntimeError):
    """Training-only component used in inference mode."""


class CheckpointError(ValueError):
    pass
