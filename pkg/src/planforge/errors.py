"""Exception types and the Violation record shared across the pipeline."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Violation:
    """A named invariant breach, pointing at the offending element.

    Violations are data, not exceptions: validators return lists of them so
    callers can report every problem at once (e.g. in a re-prompt).
    """

    rule: str
    element: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.rule}({self.element})"
        return f"{msg}: {self.detail}" if self.detail else msg


class PlanforgeError(Exception):
    """Base class for all pipeline errors."""


class SchemaError(PlanforgeError):
    """Input does not match the expected schema; `path` is a JSON-path."""

    def __init__(self, path: str, detail: str = ""):
        self.path = path
        self.detail = detail
        super().__init__(f"schema error at {path}" + (f": {detail}" if detail else ""))


class EnvValidationError(PlanforgeError):
    """An environment failed structural validation."""

    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations) or "invalid environment")


class ParseError(PlanforgeError):
    """A planner response failed to parse.

    Carries the character offset and an expected-token hint; the message is
    designed to be fed back to the planner as a corrective observation.
    """

    def __init__(self, offset: int, expected: str, detail: str = ""):
        self.offset = offset
        self.expected = expected
        self.detail = detail
        super().__init__(
            f"parse error at offset {offset}: expected {expected}"
            + (f" ({detail})" if detail else "")
        )


class GenerationExhausted(PlanforgeError):
    """Scenario generation failed after every allowed re-prompt."""

    def __init__(self, attempts: int, last_error: Exception):
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"generation failed after {attempts} attempts: {last_error}")


class BackendUnavailable(PlanforgeError):
    """The completion backend could not be reached within the retry budget."""


class BackendTimeout(BackendUnavailable):
    """A completion request exceeded its deadline."""


class TranscriptMismatch(PlanforgeError):
    """Replay transcript exhausted, or the prompt differs from the recording."""


class EmptyDataset(PlanforgeError):
    """Export was asked to write a dataset with no valid episodes."""


class ConfigError(PlanforgeError):
    """Run configuration is missing or malformed; `path` names the field."""

    def __init__(self, path: str, detail: str = ""):
        self.path = path
        self.detail = detail
        super().__init__(f"config error at {path}" + (f": {detail}" if detail else ""))


class StageFailure(PlanforgeError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
