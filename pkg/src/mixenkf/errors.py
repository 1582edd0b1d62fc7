"""Exception types shared across the package."""


class MixEnkfError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MixEnkfError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(MixEnkfError, ValueError):
    """A matrix expected to be SPD has a nonpositive Cholesky pivot."""


class EmptyInput(MixEnkfError, ValueError):
    pass


class TooFewSamples(MixEnkfError, ValueError):
    pass


class NonFiniteState(MixEnkfError, FloatingPointError):
    """An ODE state or particle became NaN/inf (numerical blow-up)."""


class DimensionTooSmall(MixEnkfError, ValueError):
    pass


class UnknownName(MixEnkfError, KeyError):
    pass


class RequiresLinearObservation(MixEnkfError, ValueError):
    """Operation is only defined for models with a linear observation map."""


class DegenerateProposal(MixEnkfError, ValueError):
    """Proposal covariance is singular and unusable for importance sampling."""


class AllWeightsZero(MixEnkfError, ArithmeticError):
    """Every importance weight underflowed to zero (total degeneracy)."""


class UnsupportedDimension(MixEnkfError, ValueError):
    pass


class OutOfDomain(MixEnkfError, ValueError):
    pass


class ZeroBandwidth(MixEnkfError, ValueError):
    pass


class ZeroMeanWeight(MixEnkfError, ValueError):
    pass


class AbsoluteContinuityViolated(MixEnkfError, ValueError):
    """A proposal assigns zero mass where the target has positive mass."""


class IncompatibleInput(MixEnkfError, ValueError):
    pass


class MalformedCSV(MixEnkfError, ValueError):
    pass


class IOFailure(MixEnkfError, OSError):
    pass


class ConfigError(MixEnkfError, ValueError):
    pass
