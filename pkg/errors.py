"""
Errors Module
Exception types raised by the training library and the experiment harness.
"""


class GFlowNetError(Exception):
    """Base class for every error raised by this project"""


class ConfigError(GFlowNetError):
    """Invalid or incomplete run configuration"""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DimensionError(GFlowNetError):
    """Operand shapes do not agree"""


class StaleTapeError(GFlowNetError):
    """A tape was replayed after the parameters it recorded were updated"""


class DivergenceError(GFlowNetError):
    """A non-finite value appeared in a forward pass, a gradient or a loss"""


class IllegalMoveError(GFlowNetError):
    """An action is not allowed in the current grid state"""


class CapacityError(GFlowNetError):
    """The state space is too large to enumerate"""


class UsageError(GFlowNetError):
    """A function was called outside of its contract"""
