"""Exception hierarchy shared across the pipeline."""


class ToolforgeError(Exception):
    """Base class for all pipeline errors."""


class BadRequest(ToolforgeError):
    """A chat request violates its invariants."""


class TransportError(ToolforgeError):
    """The live backend was unreachable or timed out."""


class ScriptMiss(ToolforgeError):
    """The scripted mock has no entry for a request."""


class EmptyCorpus(ToolforgeError):
    pass


class DuplicateDocId(ToolforgeError):
    pass


class IndexOutOfRange(ToolforgeError):
    pass


class ParseError(ToolforgeError):
    """A backend completion is not in the required document format."""


class PlanParseError(ParseError):
    pass


class StructureMismatch(ToolforgeError):
    """Parsed trace structure does not match the pattern structure."""


class DialogueParseError(ParseError):
    pass


class AssemblyError(ToolforgeError):
    """Sample invariant violated during assembly; names the invariant."""

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)


class JudgeParseError(ParseError):
    pass


class Exhausted(ToolforgeError):
    """A variant slot could not be filled; carries the partial tool set."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class EmptyCandidateSet(ToolforgeError):
    pass


class NoQualifyingNegative(ToolforgeError):
    pass


class InsufficientPositives(ToolforgeError):
    pass


class MissingVerdict(ToolforgeError):
    pass


class ConfigError(ToolforgeError):
    pass


class IoError(ToolforgeError):
    pass


class SynthesisFailure(ToolforgeError):
    """A synthesis stage failed for one seed; tagged with its phase."""

    def __init__(self, phase: str, cause: Exception):
        self.phase = phase
        self.cause = cause
        super().__init__(f"{phase}: {cause}")
