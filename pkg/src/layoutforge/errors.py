"""Exception hierarchy shared by every layoutforge module."""


class LayoutForgeError(Exception):
    """Base class for all errors raised by layoutforge."""


class InvalidGeometryError(LayoutForgeError, ValueError):
    pass


class ShapeError(LayoutForgeError, ValueError):
    pass


class DomainError(LayoutForgeError, ValueError):
    """A numeric argument lies outside the domain of the function."""


class MissingGradientError(LayoutForgeError, RuntimeError):
    pass


class DatasetError(LayoutForgeError, ValueError):
    pass


class ConfigError(LayoutForgeError, ValueError):
    pass


class DivergenceError(LayoutForgeError, ArithmeticError):
    def __init__(self, step: int, losses: dict):
        self.step = step
        self.losses = losses
        super().__init__(f"non-finite loss at step {step}: {losses}")


class UndefinedMetricError(LayoutForgeError, ZeroDivisionError):
    pass


class CheckpointError(LayoutForgeError, ValueError):
    """Unreadable or malformed checkpoint file."""
