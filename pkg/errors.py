#!/usr/bin/env python3
"""
Exception hierarchy for split-bench.

Every error raised on purpose by the library derives from SplitBenchError.
The CLI maps the three families to exit codes:

    ConfigError -> 2
    DataError   -> 3
    anything else (including StageError wrapping an internal failure) -> 4
"""

from pathlib import Path


class SplitBenchError(Exception):
    """Base class for all split-bench errors."""

    exit_code = 4


class ConfigError(SplitBenchError):
    """Invalid or unreadable configuration."""

    exit_code = 2


class DataError(SplitBenchError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 3


class ManifestError(DataError):
    """A manifest record could not be accepted."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self._message = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def __reduce__(self):
        return type(self), (self._message, self.line)


class AudioFormatError(DataError):
    """Audio file uses a codec or layout we do not read."""


class WavParseError(DataError):
    """Audio file is structurally broken (truncated, bad chunk)."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        self._message = message
        super().__init__(f"{message} (at byte offset {offset})")

    def __reduce__(self):
        return type(self), (self._message, self.offset)


class SplitError(DataError):
    """A partition cannot be produced for this corpus and parameters."""


class MissingHypothesisError(DataError):
    """Some test utterances have no hypothesis transcript."""

    def __init__(self, missing: list[str]):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:20])
        more = f" (+{len(self.missing) - 20} more)" if len(self.missing) > 20 else ""
        super().__init__(f"missing hypotheses for {len(self.missing)} utterance(s): {shown}{more}")


class RankDeficiencyError(DataError):
    """Design matrix is not full rank."""

    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(columns)}")


class StageError(SplitBenchError):
    """A pipeline stage failed; carries what was already finished."""

    def __init__(
        self,
        stage: str,
        cause: Exception,
        artifact: Path | None = None,
        completed: list[str] | None = None,
    ):
        self.stage = stage
        self.cause = cause
        self.artifact = artifact
        self.completed = list(completed or [])
        self.exit_code = getattr(cause, "exit_code", 4)
        where = f" [{artifact}]" if artifact else ""
        done = ", ".join(self.completed) if self.completed else "none"
        super().__init__(f"stage '{stage}' failed{where}: {cause} (completed stages: {done})")
