"""Exception hierarchy shared by all modules."""


class SymnetError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(SymnetError, ValueError):
    pass


class DimensionError(ParameterError):
    """Tensor shapes disagree; the message names the offending axis."""


class GeometryError(ParameterError):
    pass


class ContractError(SymnetError):
    pass


class ConfigError(ParameterError):
    pass


class SizeError(ParameterError):
    pass


class ParseError(SymnetError, ValueError):
    """Malformed input record.  ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"line {lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)


class SchemaError(ParseError):
    pass


class GenerationError(SymnetError):
    pass


class TrainingError(SymnetError):
    pass


class MissingPredictionError(SymnetError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("missing predictions for: " + ", ".join(self.missing))
