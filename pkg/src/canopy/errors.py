"""Exception hierarchy.

The CLI maps these onto exit codes: data problems exit 1, configuration
problems exit 2, storage/runtime problems exit 3.
"""


class CanopyError(Exception):
    exit_code = 3


class DataError(CanopyError):
    exit_code = 1


class ParseError(DataError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SchemaError(DataError):
    pass


class TruncationError(DataError):
    pass


class StreamError(DataError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class FormatError(DataError):
    """Malformed serialized tree or forest."""


class ConfigError(CanopyError, ValueError):
    exit_code = 2


class DomainError(CanopyError, ValueError):
    exit_code = 2


class StorageError(CanopyError):
    exit_code = 3


class BucketLookupError(StorageError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
