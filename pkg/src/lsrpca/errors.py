"""Exception hierarchy.

Every error raised by the package derives from :class:`LsrpcaError`; the CLI
maps each subclass to its own exit code.
"""


class LsrpcaError(Exception):
    exit_code = 1


class ShapeError(LsrpcaError, ValueError):
    exit_code = 5


class PreconditionError(LsrpcaError, ValueError):
    """An algorithm entry check failed (e.g. first slice shorter than K-bar)."""

    exit_code = 3


class RankDeficientError(LsrpcaError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, rank=None, size=None):
        super().__init__(message)
        self.rank = rank
        self.size = size


class StorageError(LsrpcaError, OSError):
    exit_code = 6


class CorruptSliceError(StorageError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SliceNotFoundError(StorageError, FileNotFoundError):
    pass


class ParseError(LsrpcaError, ValueError):
    exit_code = 7

    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.path = path


class ConfigError(LsrpcaError, ValueError):
    exit_code = 2
