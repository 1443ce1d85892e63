# This file is a part of craterkit.
#
# craterkit is free software; you can redistribute it and/or modify it
# under the terms of the GNU Lesser General Public License as published by
# the Free Software Foundation, either version 3 of the License, or (at
# your option) any later version.  See docs/source/license.rst.

from typing import Any, Dict, Optional, Sequence, Tuple


class CraterkitError(Exception):
    """Base class for all craterkit exceptions.
    """

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class InvalidParameter(CraterkitError, ValueError):
    """Raised when an argument violates an operation's preconditions.
    """


class InvalidRange(InvalidParameter):
    """Raised when a (low, high) pair is empty or out of order.
    """


class OutOfBounds(CraterkitError):
    """Raised when a rectangle extends past the raster it addresses.
    """


class ZeroArea(CraterkitError):
    """Raised when a rectangle has no width or no height.
    """


class GridTooFine(CraterkitError):
    """Raised by clahe when a contextual region would be smaller than 2x2.
    """


class TileLargerThanImage(CraterkitError):
    """Raised when a tiling plan asks for tiles bigger than the parent.
    """


class DimensionMismatch(CraterkitError):
    """Raised when two rasters (or a raster and a grid) disagree on size.
    """


class MissingColumn(CraterkitError):
    """Raised when a catalog header lacks one of the schema columns.
    """


class EmptyCatalog(CraterkitError):
    """Raised when a catalog has no valid data rows.
    """


class PolarRegion(CraterkitError):
    """Raised for craters above the projection's latitude limit.
    """


class OffMosaic(CraterkitError):
    """Raised when a projected crater box has nothing left after clamping.
    """


class ParseError(CraterkitError):
    """Raised when a label, detection, manifest or sidecar file cannot
    be parsed.  Carries the offending path and 1-based line number
    when they are known.
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        super().__init__(message)
        self.path = path
        self.line = line

    def __str__(self) -> str:
        location = ":".join(str(part) for part in (self.path, self.line) if part is not None)
        if location:
            return f"{location}: {self.message}"
        return self.message


class RangeError(ParseError):
    """Raised when a parsed coordinate lies outside its legal range.
    """


class EmptyHistogram(CraterkitError):
    """Raised when histogram matching is given a histogram with no counts.
    """


class CommandFailed(CraterkitError):
    """Raised when an external command exits with a nonzero status.
    """

    def __init__(self, message: str, returncode: int) -> None:
        super().__init__(message)
        self.returncode = returncode


class MissingOutputs(CraterkitError):
    """Raised when an external translator did not produce every image.
    """

    def __init__(self, stems: Sequence[str]) -> None:
        super().__init__(f"missing outputs for: {', '.join(stems)}")
        self.stems: Tuple[str, ...] = tuple(stems)


class DimensionDrift(CraterkitError):
    """Raised when an external translator changed an image's size.
    """


class UnknownOrigin(CraterkitError):
    """Raised when detections reference a tile origin that isn't part
    of the grid.
    """


class StemMismatch(CraterkitError):
    """Raised when detections exist for an image with no ground truth.
    """


class SingularTransform(CraterkitError):
    """Raised when a world transform cannot be inverted.
    """


class TooFewGroups(CraterkitError):
    """Raised when a manifest has too few groups to fill three splits.
    """


class MissingSource(CraterkitError):
    """Raised when a dataset composition lacks one of its sources.
    """


class PlacementFailure(CraterkitError):
    """Raised when synthetic craters cannot be placed without overlap.
    """


class ResolutionError(CraterkitError):
    """Raised when a command parameter cannot be provided by any component.
    """


class ValidationError(CraterkitError):
    """Raised by load_schema when settings data is invalid.
    """

    def __init__(self, reasons: Dict[str, Any]) -> None:
        super().__init__(str(reasons))
        self.reasons = reasons

    def __str__(self) -> str:
        return "invalid settings: " + "; ".join(_flatten_reasons(self.reasons))


class FieldValidationError(CraterkitError):
    """Raised by Field.validate when a given value is invalid.
    """


def _flatten_reasons(reasons: Dict[str, Any], prefix: str = "") -> Sequence[str]:
    lines = []
    for name, reason in reasons.items():
        path = f"{prefix}{name}"
        if isinstance(reason, dict):
            lines.extend(_flatten_reasons(reason, f"{path}."))
        else:
            lines.append(f"{path}: {reason}")
    return lines
