"""
Error hierarchy shared by all heliodet modules

The CLI maps HeliodetError to exit code 1 and OSError (including
DatasetIOError) to exit code 2.
"""

from typing import Optional, Sequence


class HeliodetError(Exception):
    """Base class for validation and runtime errors"""


class ArgumentError(HeliodetError, ValueError):
    """Invalid argument passed to an operation"""


class ConfigError(HeliodetError):
    """Invalid run configuration; names the offending key"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config error on '{key}': {message}")


class DecodeError(HeliodetError):
    """Malformed image file; names the byte offset of the problem"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class ShapeError(HeliodetError):
    """Incompatible tensor shapes; names the layer"""

    def __init__(self, layer: str, message: str):
        self.layer = layer
        super().__init__(f"{layer}: {message}")


class NetworkStateError(HeliodetError):
    """Operation called in the wrong network state (e.g. backward before forward)"""


class LabelParseError(HeliodetError):
    """Malformed label file; names the 1-based line number"""

    def __init__(self, line: int, message: str):
        self.line = line
        self.detail = message
        super().__init__(f"line {line}: {message}")


class DatasetIOError(HeliodetError, OSError):
    """Missing or unwritable dataset files"""

    def __init__(self, message: str, paths: Optional[Sequence[str]] = None):
        self.paths = list(paths or [])
        detail = f": {', '.join(self.paths)}" if self.paths else ""
        super().__init__(f"{message}{detail}")


class TrainingDivergedError(HeliodetError):
    """Non-finite loss during training"""

    def __init__(self, epoch: int, batch: int, term: str):
        self.epoch = epoch
        self.batch = batch
        self.term = term
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch} (term: {term})"
        )


class MetricsError(HeliodetError):
    """Metric undefined for the given inputs"""
