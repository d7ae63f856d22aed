"""Exception hierarchy; the CLI maps each family to an exit code."""


class ConfigError(ValueError):
    """Invalid user configuration (exit code 1)."""


class DataError(ValueError):
    """Malformed or unusable input data (exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical routine failed (exit code 3)."""


class ConvergenceError(NumericalError):
    def __init__(self, message, kkt_violation=float("nan"), iterations=0):
        super().__init__(message)
        self.kkt_violation = kkt_violation
        self.iterations = iterations
