"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or layer shapes are incompatible. Message names the offending axis."""


class GraphError(RuntimeError):
    """Backward was requested on a tensor the current recording did not produce."""


class FormatError(ValueError):
    """An on-disk artifact (checkpoint, index, dataset) is malformed or truncated."""


class ConfigError(ValueError):
    """A run configuration value is invalid or inconsistent."""
