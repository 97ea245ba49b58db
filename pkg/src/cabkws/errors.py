"""Exception types raised across the package."""


class WavParseError(ValueError):
    """The file is not a readable RIFF/WAVE container."""


class UnsupportedFormatError(ValueError):
    """The WAV file is valid but uses an encoding we do not read."""


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class GraphError(RuntimeError):
    """A gradient was requested through a branch the forward pass did not run."""
