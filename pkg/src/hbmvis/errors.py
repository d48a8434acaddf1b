"""Exception hierarchy. Everything the CLI reports with exit status 1 derives from HbmError."""


class HbmError(Exception):
    pass


class SchemaError(HbmError):
    pass


class ParseError(HbmError):
    pass


class DuplicateObservationError(HbmError):
    pass


class CoverageError(HbmError):
    pass


class ConfigurationError(HbmError):
    pass


class NumericalError(HbmError):
    pass


class DegenerateTailError(HbmError):
    """Too few or identical tail excesses to fit a generalized Pareto distribution."""


class MismatchError(HbmError):
    pass
