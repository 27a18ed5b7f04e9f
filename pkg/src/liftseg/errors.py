"""Exception hierarchy shared by all liftseg modules.

Validation-type errors map to CLI exit code 2, pipeline-type errors to 3.
"""


class LiftsegError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(LiftsegError):
    """A file could not be decoded; message names the file and position."""

    def __init__(self, path, detail, offset=None, line=None):
        where = str(path)
        if line is not None:
            where += f":{line}"
        elif offset is not None:
            where += f" (byte {offset})"
        super().__init__(f"{where}: {detail}")
        self.path = str(path)
        self.offset = offset
        self.line = line


class ValidationError(LiftsegError):
    """Data violates a declared invariant (bad ranges, shape mismatches)."""


class ConfigurationError(LiftsegError):
    """A configuration value or camera model is unusable."""


class PipelineError(LiftsegError):
    """A pipeline stage cannot produce a usable result."""


class DependencyError(PipelineError):
    """A stage checkpoint required as input is missing."""

    def __init__(self, stage_needed, detail=""):
        msg = f"missing checkpoint from stage '{stage_needed}'; run that stage first"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.stage_needed = stage_needed


class GenerationError(PipelineError):
    """Synthetic scene generation failed (e.g. object placement)."""


class SemanticUndefinedError(PipelineError):
    """A proposal has no visible points, so no semantic feature exists."""
