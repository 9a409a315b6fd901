class KvnError(Exception):
    """Base class for kvnsim errors."""


class GridError(KvnError, ValueError):
    pass


class DynamicsError(KvnError, ValueError):
    pass


class BlowUpError(KvnError, ArithmeticError):
    """A characteristic left the finite range; ``time`` is where it happened."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class OperatorError(KvnError, ValueError):
    pass


class PropagationError(KvnError, RuntimeError):
    pass


class CausticError(KvnError, ValueError):
    """Jacobian series touches zero without a clean sign change."""


class ObservableError(KvnError, ValueError):
    pass


class EstimationError(KvnError, ValueError):
    pass


class ConfigError(KvnError, ValueError):
    pass
