"""
The :mod:`qscan.errors` module defines the exceptions raised by qscan.

All of them derive from `QScanError`, itself a `ValueError`, so callers that only
care about bad input can catch `ValueError`.
"""

from typing import List, Optional


class QScanError(ValueError):
    """Base class for all qscan errors"""


class SingularDesignError(QScanError):
    """Covariate matrix is not of full column rank"""


class ConvergenceError(QScanError):
    """IRLS did not converge; `trace` holds max |delta alpha| per iteration"""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class SeparationError(QScanError):
    """Fitted binomial means hit the boundary"""


class DegenerateVarianceError(QScanError):
    """Phenotype has zero residual variance"""


class DimensionMismatchError(QScanError):
    pass


class NoVariantsError(QScanError):
    pass


class DegenerateWindowError(QScanError):
    """Window has zero Frobenius norm or zero variance of the score sum"""


class NoValidWindowError(QScanError):
    pass


class CholeskyError(QScanError):
    pass


class ParseError(QScanError):
    """Malformed input; `line` is the 1-based line number when known"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        location = ''
        if path is not None:
            location = f'{path}'
        if line is not None:
            location = f'{location}:{line}' if location else f'line {line}'
        super().__init__(f'{location}: {message}' if location else message)
        self.line = line
        self.path = path


class OrderingError(ParseError):
    """Positions not strictly increasing within a chromosome"""


class FormatError(ParseError):
    """Missing or malformed header / file layout"""


class PlacementError(QScanError):
    pass


class SamplingError(QScanError):
    pass
