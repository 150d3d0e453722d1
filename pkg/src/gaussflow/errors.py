"""Exception hierarchy shared by all gaussflow modules."""


class GaussflowError(Exception):
    """Base class for every error raised by the library."""


class DimensionMismatch(GaussflowError, ValueError):
    pass


class NotSymmetric(GaussflowError, ValueError):
    pass


class NotPSD(GaussflowError, ValueError):
    pass


class NegativeSpectrum(GaussflowError, ValueError):
    pass


class SeriesDivergence(GaussflowError, ArithmeticError):
    pass


class SingularCovariance(GaussflowError, ValueError):
    """Density requested for a kernel whose covariance is (numerically) singular."""


class NonGaussianComposition(GaussflowError, ValueError):
    pass


class StepFailure(GaussflowError, ArithmeticError):
    pass


class PSDLost(GaussflowError, ArithmeticError):
    pass


class CNotZero(GaussflowError, ValueError):
    pass


class DNotZero(GaussflowError, ValueError):
    pass


class NoisyFlow(GaussflowError, ArithmeticError):
    pass


class AlphaNonzero(GaussflowError, ValueError):
    pass


class DegenerateStep(GaussflowError, ValueError):
    pass


class EmptyAcceptance(GaussflowError, ValueError):
    pass


class BridgeUnavailable(GaussflowError, ValueError):
    pass


class LowAcceptance(GaussflowError, ArithmeticError):
    pass


class WeightOverflow(GaussflowError, OverflowError):
    def __init__(self, message, fraction=None):
        super().__init__(message)
        self.fraction = fraction


class MomentConditionViolated(GaussflowError, ValueError):
    pass


class ConfigError(GaussflowError, ValueError):
    """Invalid experiment configuration; ``line`` points into the JSON source when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
