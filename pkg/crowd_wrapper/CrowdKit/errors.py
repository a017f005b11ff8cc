# -*- coding: utf-8 -*-
"""This module houses the exceptions raised across CrowdKit.

Everything derives from ``CrowdKitError`` so the command line can tell a
library failure apart from a programming error. Errors caused by a bad
argument also derive from ``ValueError``.
"""


class CrowdKitError(Exception):
    """Base class for every error raised by CrowdKit."""


class ConfigError(CrowdKitError, ValueError):
    """The run configuration failed schema validation."""


# Geometry.


class ImageTooSmall(CrowdKitError, ValueError):
    pass


class InvalidRatio(CrowdKitError, ValueError):
    pass


class OutOfBounds(CrowdKitError, ValueError):
    pass


class ImageReadError(CrowdKitError, OSError):
    """A raster file could not be opened or decoded."""


# Prompts and encoders.


class TargetMissing(CrowdKitError, ValueError):
    pass


class EncoderFailure(CrowdKitError, RuntimeError):
    """An encoder backend raised while producing embeddings."""


class ShapeMismatch(CrowdKitError, ValueError):
    pass


class DimMismatch(CrowdKitError, ValueError):
    pass


# Training.


class NotSquare(CrowdKitError, ValueError):
    pass


class EmptyStream(CrowdKitError, ValueError):
    pass


class KinkTooClose(CrowdKitError, ValueError):
    """A hinge argument sits too close to zero for finite differences."""


# Datasets and metrics.


class ParseError(CrowdKitError, ValueError):
    """A manifest record could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    line : int, optional
        1-based line number of the offending record.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)


class BoundsError(CrowdKitError, ValueError):
    """Annotated points fall outside their image.

    Parameters
    ----------
    message : str
        What went wrong.
    points : list of tuple
        The offending ``(x, y)`` points.
    """

    def __init__(self, message, points=()):
        self.points = list(points)
        super().__init__("{}: {}".format(message, self.points[:10]))


class LengthMismatch(CrowdKitError, ValueError):
    pass


class EmptyDataset(CrowdKitError, ValueError):
    pass


# Command line.


class OutputLocked(CrowdKitError, RuntimeError):
    """Another command is already writing to the output directory."""
