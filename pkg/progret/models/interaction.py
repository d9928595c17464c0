from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, model_validator


class Role(str, Enum):
    ASSISTANT = "assistant"
    FUNCTION = "function"
    USER = "user"
    SYSTEM = "system"


class Step(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    text: str = ""
    tool_id: Optional[str] = None


class Interaction(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    full_query: str
    steps: List[Step]

    @model_validator(mode="after")
    def check_assistant_tools(self):
        for step in self.steps:
            if step.role == Role.ASSISTANT and not step.tool_id:
                raise ValueError("every assistant step must carry a tool_id")
        return self

    @property
    def assistant_count(self) -> int:
        return sum(1 for step in self.steps if step.role == Role.ASSISTANT)


class HistoryEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    text: str


class Target(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool_id: str
    text: str


class UnrolledInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    step_index: int
    request: str
    history: List[HistoryEntry] = []
    target: Target

    @property
    def key(self):
        return (self.query_id, self.step_index)


class PlannerPrediction(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    step_index: int
    tool: str = ""
    text: str = ""

    @property
    def key(self):
        return (self.query_id, self.step_index)


class PromptRecord(BaseModel):
    query_id: str
    step_index: int
    candidates: List[str]
    prompt: str
