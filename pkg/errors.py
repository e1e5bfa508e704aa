"""
Exception hierarchy shared by the enhancement engine, the trainer and the CLI
"""

from typing import Optional


class EnhancerError(Exception):
    """Base class for every error raised on purpose by this package"""


class ConfigurationError(EnhancerError, ValueError):
    """Invalid configuration values, flag combinations or layer sizing"""


class ShapeError(EnhancerError, ValueError):
    """Operand shapes do not match what the operation was built for"""


class AudioFormatError(EnhancerError):
    """Unreadable, malformed or unsupported audio input"""


class ModelFormatError(EnhancerError):
    """Model file with a bad magic, unknown version or failing checksum"""


class NumericalError(EnhancerError):
    """
    NaN or Inf reached a loss or a gradient

    Args:
        message: Human-readable description
        dump_path: Where the offending batch was written, if anywhere
    """

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path
