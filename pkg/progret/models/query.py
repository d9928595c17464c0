from enum import Enum
from typing import Dict, List

from pydantic import BaseModel, ConfigDict, field_validator


class ComplexQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    text: str
    gt_plan: List[str] = []

    @property
    def n_subtasks(self) -> int:
        return len(self.gt_plan)


class DecomposedQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    subqueries: List[str]

    @field_validator("subqueries")
    def validate_subqueries(cls, v):
        if not v:
            raise ValueError("subqueries must not be empty")
        return v


class RemovalReason(str, Enum):
    UNKNOWN_TOOL = "unknown-tool"
    EMPTY_PLAN = "empty-plan"
    TOO_MANY_SUBTASKS = "too-many-subtasks"


class CleaningReport(BaseModel):
    removed_query_ids: List[str] = []
    reasons: Dict[str, RemovalReason] = {}
    unknown_tools: Dict[str, List[str]] = {}

    def add(self, query_id: str, reason: RemovalReason, unknown=None):
        self.removed_query_ids.append(query_id)
        self.reasons[query_id] = reason
        if unknown:
            self.unknown_tools[query_id] = list(unknown)

    def is_empty(self) -> bool:
        return not self.removed_query_ids


class DatasetStats(BaseModel):
    count: int
    histogram: Dict[int, int] = {}
    mean: float | None = None
    std: float | None = None
