"""Multi-model subtask orchestration: plan a request into a DAG of typed
subtasks, run several ranked models per subtask, pick one result per
subtask by similarity-aided arbitration, and compose the answer."""

from .core import (
    CandidateResult,
    DegradedResponse,
    FinalResponse,
    ModelDescriptor,
    ResourceRef,
    SelectionDecision,
    Subtask,
    TaskPlan,
    UserRequest,
    topological_order,
    validate_plan,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateResult",
    "DegradedResponse",
    "FinalResponse",
    "ModelDescriptor",
    "ResourceRef",
    "SelectionDecision",
    "Subtask",
    "TaskPlan",
    "UserRequest",
    "topological_order",
    "validate_plan",
]
