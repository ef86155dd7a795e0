"""Exception hierarchy. Each class carries the exit code the CLI returns for it."""


class InsectcamError(Exception):
    exit_code = 4


class ConfigError(InsectcamError, ValueError):
    """Bad or missing configuration: schema violation, missing referenced path."""

    exit_code = 2


class DataError(InsectcamError, ValueError):
    """Input data is malformed or violates a domain precondition."""

    exit_code = 3


class DomainError(DataError):
    """Numeric argument outside the operation's domain (e.g. non-positive length)."""


class NoInsectError(DataError):
    """Mask holds no component that survives the dust filter."""


class ShapeError(DataError):
    pass


class TaxonomyParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ManifestError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParamFileError(DataError):
    pass


class BadMagicError(ParamFileError):
    pass


class UnsupportedVersionError(ParamFileError):
    pass


class TruncatedParamsError(ParamFileError):
    pass


class StageError(InsectcamError):
    """A pipeline stage failed; wraps the underlying error and names the stage."""

    exit_code = 4

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
