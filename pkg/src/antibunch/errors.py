"""Exception hierarchy.

Every error raised on purpose by the package derives from ``AntibunchError``
so callers (and the CLI) can separate domain failures from bugs.
"""


class AntibunchError(Exception):
    pass


class InvariantViolation(AntibunchError, ValueError):
    """A value object was constructed with inconsistent fields."""


class ConfigError(AntibunchError):
    """Base for configuration loading failures.

    ``source`` and ``line`` locate the problem when known.
    """

    def __init__(self, message, source=None, line=None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f"{source}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ConfigParseError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    def __init__(self, key, source=None, line=None):
        self.key = key
        super().__init__(f"missing required key {key!r}", source, line)


class UnknownKeyError(ConfigError):
    def __init__(self, key, source=None, line=None):
        self.key = key
        super().__init__(f"unknown key {key!r}", source, line)


class ConfigInvariantError(ConfigError, InvariantViolation):
    pass


class GridError(AntibunchError, ValueError):
    pass


class GridTooCoarse(GridError):
    pass


class GridTooNarrow(GridError):
    pass


class PositionOutsideGrid(AntibunchError, ValueError):
    pass


class FitError(AntibunchError, RuntimeError):
    pass


class NonConvergence(FitError):
    pass


class InsufficientSpan(FitError):
    pass


class DataFormatError(AntibunchError, ValueError):
    """A data file could not be parsed."""


class MissingZeroDelay(AntibunchError, ValueError):
    pass


class MissingDelaySample(AntibunchError, ValueError):
    pass
