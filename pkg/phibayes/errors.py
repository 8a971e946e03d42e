class PhiBayesError(Exception):
    """
    Base class for every error raised by phibayes
    """

    exit_code = 3


class ConfigError(PhiBayesError, ValueError):
    exit_code = 2


class DomainError(PhiBayesError, ValueError):
    """
    Argument outside the domain of an operation: x <= 0 for phi, data outside the model support,
    parameters outside the parameter box
    """


class DivergenceOverflow(PhiBayesError, OverflowError):
    pass


class DivergenceInfinite(PhiBayesError):
    """
    Quadrature of a divergence-type integral did not stabilize, the pair is taken to lie outside U
    """


class OptimizationError(PhiBayesError):
    def __init__(self, message: str, trace: list | None = None) -> None:
        super().__init__(message)
        self.trace = trace or []


class NoFiniteStart(OptimizationError):
    pass


class InitInvalid(PhiBayesError):
    pass


class TooShort(PhiBayesError, ValueError):
    pass


class SingularS(PhiBayesError):
    pass


class PosteriorUnderflow(PhiBayesError):
    pass
