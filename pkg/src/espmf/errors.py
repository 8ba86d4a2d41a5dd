"""Exception hierarchy shared across the pipeline."""


class EspmfError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(EspmfError):
    """A skeleton file contains a token that is not a number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class MalformedFileError(EspmfError):
    """A skeleton file is structurally inconsistent (counts, layout)."""


class ConfigError(EspmfError):
    """Invalid configuration: bad split, filter window, tile grid, ..."""


class DegenerateDataError(EspmfError):
    """Statistics or ranges collapse to zero width."""


class SequenceTooShortError(EspmfError):
    """Sequence has fewer frames than an operation needs."""


class ShapeError(EspmfError):
    """Tensor shapes do not agree."""


class CheckpointError(EspmfError):
    """Checkpoint file is unreadable or has an unsupported version."""


class TrainingError(EspmfError):
    """Training diverged or was given no data."""
