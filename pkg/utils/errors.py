class HuapaError(Exception):
    """Base error. Carries the process exit code the CLI reports for it."""

    exit_code = 1
    kind = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(HuapaError):
    """Usage, configuration or checkpoint/vocabulary mismatch."""

    exit_code = 1
    kind = "config"


class DataError(HuapaError):
    """Malformed corpus, embedding or vocabulary file."""

    exit_code = 2
    kind = "data"


class NumericError(HuapaError):
    """Non-finite values, shape mismatches and other numeric failures."""

    exit_code = 3
    kind = "numeric"


class ShapeError(NumericError):
    pass


class IndexOutOfRangeError(NumericError):
    pass


class EmptySupportError(NumericError):
    def __init__(self, message: str = "empty attention support"):
        super().__init__(message)


class CheckpointError(ConfigError):
    pass
