"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or layer dimensions do not line up."""


class ParameterError(ValueError):
    """A numeric argument is outside its valid range."""


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


class ProtocolError(RuntimeError):
    """An aggregation-protocol precondition was violated at runtime."""
