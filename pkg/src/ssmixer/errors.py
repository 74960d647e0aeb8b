"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ValidationError(ValueError):
    """An argument violates a documented precondition."""


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf from its inputs."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (untracked loss, freed graph, ...)."""


class SequencingError(RuntimeError):
    """A feature-cache entry was read before it was written (or written twice)."""


class MisuseError(ValueError):
    """An op was called on inputs outside its domain of meaning."""


class ConfigError(ValueError):
    """A model or experiment configuration is inconsistent."""
