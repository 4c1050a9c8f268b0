class AlcirError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(AlcirError, ValueError):
    pass


class DegenerateVectorError(AlcirError, ValueError):
    pass


class EmbeddingLookupError(AlcirError, IndexError):
    pass


class TrainingDivergenceError(AlcirError, FloatingPointError):
    pass


class IngestionError(AlcirError, ValueError):
    pass


class SplitInfeasibleError(AlcirError, ValueError):
    pass


class SamplingError(AlcirError, ValueError):
    pass


class ConfigError(AlcirError, ValueError):
    pass


class ConstraintError(AlcirError, ValueError):
    """A recommendation was requested from the seed's own category."""


class EvaluationError(AlcirError, ValueError):
    pass
