"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes disagree."""


class ConfigError(ValueError):
    """A configuration value is out of contract."""


class NpyFormatError(ValueError):
    """An NPY file violates the accepted v1.0 subset; message names the offending header field."""


class ManifestError(ValueError):
    """A replay manifest is invalid; message names the offending step or key."""


class DegenerateDirectionError(ValueError):
    """Projection direction has (numerically) zero norm."""


class DegeneratePosteriorError(ValueError):
    """All mixture posterior log-weights are non-finite."""


class SamplingError(RuntimeError):
    """Model evaluation failed during a sampling run; message carries the step index."""
