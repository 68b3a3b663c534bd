"""Exception hierarchy shared across the package and the CLI exit-code map."""


class MargokitError(Exception):
    """Base class for all package-specific errors."""


class UsageError(MargokitError):
    """Invalid arguments or incompatible option combinations (CLI exit 1)."""


class DataError(MargokitError):
    """Malformed or unusable input data (CLI exit 2)."""


class ParseError(DataError):
    """CSV parse failure; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(MargokitError):
    """Numerical failure, e.g. a degenerate eigendecomposition (CLI exit 3)."""


class ModelFileError(DataError):
    """Base class for model (de)serialization failures."""


class ModelVersionError(ModelFileError):
    """Model file declares an unsupported format_version."""


class ModelCorruptError(ModelFileError):
    """Model file is truncated or not valid JSON."""


class ModelSchemaError(ModelFileError):
    """Model file is valid JSON but violates the envelope schema."""
