"""Exception hierarchy shared by all modules."""


class MilsteinMdpError(Exception):
    """Base class for all package errors."""


class ConfigError(MilsteinMdpError):
    """Invalid experiment configuration; carries the offending key when known."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NonFiniteEvaluation(MilsteinMdpError):
    """A model function or chain state became NaN/inf."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EmptyGrid(MilsteinMdpError):
    pass


class UnknownModelId(MilsteinMdpError):
    pass


class InvalidParams(MilsteinMdpError):
    pass


class UnknownTestFunctionId(MilsteinMdpError):
    pass


class NotOneDimensional(MilsteinMdpError):
    pass


class TruncationInsufficient(MilsteinMdpError):
    """Density mass at the grid boundary is above the negligibility threshold."""


class DensityUnderflow(MilsteinMdpError):
    """Stationary density fell below the configured floor inside the grid."""


class ResidualTooLarge(MilsteinMdpError):
    def __init__(self, message, residual_sup=None):
        super().__init__(message)
        self.residual_sup = residual_sup


class ZeroNormalization(MilsteinMdpError):
    """Variance estimate is zero; the normalized statistic is undefined."""


class StateOutsideGrid(MilsteinMdpError):
    """Too many chain states fell outside the Stein grid (clamp budget exceeded)."""

    def __init__(self, message, clamped=None, steps=None):
        super().__init__(message)
        self.clamped = clamped
        self.steps = steps


class InsufficientEtaGrid(MilsteinMdpError):
    pass


class EmptyReplicaSet(MilsteinMdpError):
    pass


class AllReplicasFailed(MilsteinMdpError):
    pass


class TooFewSamples(MilsteinMdpError):
    pass


class InsufficientResolution(MilsteinMdpError):
    pass


class ConstantsMissing(MilsteinMdpError):
    pass
