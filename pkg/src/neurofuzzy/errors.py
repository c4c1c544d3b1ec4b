"""Exception hierarchy shared across the package."""


class NeuroFuzzyError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(NeuroFuzzyError, ValueError):
    """Shapes, indices or masks are inconsistent with the network structure."""


class InputError(NeuroFuzzyError, ValueError):
    """Input data is unusable (non-finite values, wrong dtype)."""


class ConfigError(NeuroFuzzyError, ValueError):
    """A hyperparameter is outside its admissible range."""


class UsageError(NeuroFuzzyError, RuntimeError):
    """An API was called out of order, e.g. backward on a stale tape."""


class TrainingError(NeuroFuzzyError, RuntimeError):
    """Optimization diverged or produced non-finite values."""


class EnvironmentContractError(NeuroFuzzyError, RuntimeError):
    """An environment violated the reset/step contract."""
