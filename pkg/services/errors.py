"""
Exception types shared by the sorter services
"""


class SorterError(Exception):
    """Base class for every error raised by the services package"""


class ValidationError(SorterError, ValueError):
    """
    Invalid input, configuration or geometry

    Args:
        message (str): Human readable description
        line (int): Optional 1-based line number in a config file
    """

    def __init__(self, message, line=None):
        self.message = message
        self.line = line
        super().__init__(f'line {line}: {message}' if line is not None else message)


class GridMismatchError(ValidationError):
    """Two fields or maps live on different grids"""


class HologramFileError(SorterError, OSError):
    """Malformed or inconsistent hologram / checkpoint file"""
