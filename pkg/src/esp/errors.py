"""Exception hierarchy shared across the orchestrator."""


class EspError(Exception):
    """Base class for every error raised by this package."""


class Unavailable(EspError):
    """A remote service could not be reached (after retries, where applicable)."""


class LlmTimeout(EspError):
    pass


class ProtocolError(EspError):
    """A provider replied with a payload we cannot interpret."""


class ScriptMiss(EspError):
    """The mock LLM has no scripted reply for a message fingerprint."""


class CycleError(EspError):
    pass


class PlanError(EspError):
    pass


class NoJsonFound(PlanError):
    def __init__(self, text_length: int):
        super().__init__(f"no JSON object found in {text_length} characters of text")
        self.offset = text_length


class SchemaViolation(PlanError):
    def __init__(self, path: str, reason: str, offset: int = 0):
        super().__init__(f"{path}: {reason} (json starts at offset {offset})")
        self.path = path
        self.reason = reason
        self.offset = offset


class ParseFailure(PlanError):
    """The planner exhausted its repair rounds without a valid plan."""

    def __init__(self, message: str, attempts: list[str] | None = None):
        super().__init__(message)
        self.attempts = attempts or []


class EmptyPlan(PlanError):
    """The LLM declared the request unfulfillable with the task vocabulary."""


class VocabularyViolation(EspError):
    pass


class NoModelsAvailable(EspError):
    pass


class UnresolvedDependency(EspError):
    pass


class SubtaskFailed(EspError):
    def __init__(self, subtask_id: int, causes: list[str]):
        super().__init__(f"subtask {subtask_id} failed on every candidate: {'; '.join(causes)}")
        self.subtask_id = subtask_id
        self.causes = causes


class DegenerateEmbedding(EspError):
    def __init__(self, indices: list[int]):
        super().__init__(f"zero-norm embedding at candidate(s) {indices}")
        self.indices = indices


class ConfigError(EspError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems
