"""Error hierarchy; every error maps to a process exit code."""


class RenegeError(Exception):
    """Base error. `exit_code` is what the CLI returns when it escapes."""

    exit_code = 4

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class VerificationFailed(RenegeError):
    """A cross-validation check did not pass."""
    exit_code = 1


class ConfigError(RenegeError):
    """Missing or invalid configuration / command-line usage."""
    exit_code = 2


class ModelContractError(RenegeError):
    """The service model violates an assumption the solver relies on."""
    exit_code = 3


class NumericalError(RenegeError):
    """Quadrature, root finding or fixed-point failure."""
    exit_code = 4


class ConvergenceError(NumericalError):
    pass


class BracketError(NumericalError):
    pass


class NullEventError(NumericalError):
    """Conditioning on an event of (numerically) zero probability."""
    pass
