from pathlib import Path
from typing import Optional


class CmseqError(Exception):
    exit_code = 1


class ValidationError(CmseqError):
    exit_code = 1


class NumericalError(CmseqError):
    exit_code = 2


class DimensionMismatch(ValidationError):
    ...


class NotSymmetric(ValidationError):
    ...


class IndexOutOfRange(ValidationError):
    ...


class IndexOverlap(ValidationError):
    ...


class IncompleteParameters(ValidationError):
    def __init__(self, message: str, missing: Optional[list[str]] = None):
        self.missing = missing or []
        super().__init__(message)


class ModelFormatError(ValidationError):
    def __init__(self, context: tuple[Optional[Path], Optional[int], Optional[int]], message: str,
                 field: Optional[str] = None):
        self.file, self.line, self.column = context
        self.field = field
        super().__init__(message)


class NotPositiveDefinite(NumericalError):
    def __init__(self, message: str, label: Optional[str] = None, index: Optional[int] = None):
        self.label = label
        self.index = index
        super().__init__(message)


class NotReciprocal(NumericalError):
    ...


class BoundaryNotMarkov(NumericalError):
    ...
