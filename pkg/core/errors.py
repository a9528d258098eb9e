class HPDSError(Exception):
    """Base class for every error raised by the identification toolkit."""


class DomainError(HPDSError, ValueError):
    """A mathematical precondition was violated (shapes, index ranges, ranks)."""


class ConfigError(HPDSError):
    """
    Invalid experiment or identification configuration.

    `line` is the 1-based line in the config file when it is known.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path and line:
            where = f"{path}:{line}: "
        elif line:
            where = f"line {line}: "
        super().__init__(f"{where}{message}")


class NotDeskScaleError(HPDSError):
    """A full tensor reconstruction would exceed the configured entry cap."""


class DatasetError(HPDSError):
    """A dataset could not be produced or loaded."""
