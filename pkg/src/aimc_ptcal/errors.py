"""Exception hierarchy.

Each class carries a short ``category`` string used by the command line
front-end to print a categorized error line and pick an exit code.
"""


class AnalogError(Exception):
    category = "error"


class InvalidConfigError(AnalogError, ValueError):
    category = "config"


class ShapeError(AnalogError, ValueError):
    category = "shape"


class MappingDomainError(AnalogError, ValueError):
    category = "mapping-domain"


class TemporalOrderError(AnalogError, ValueError):
    category = "temporal-order"


class SolverError(AnalogError, RuntimeError):
    category = "numerical"


class CalibrationDataError(AnalogError, ValueError):
    category = "calibration-data"


class DegenerateRangeError(AnalogError, ValueError):
    category = "degenerate-range"


class TrainingFailureError(AnalogError, RuntimeError):
    category = "training"


class ManifestParseError(AnalogError, ValueError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
