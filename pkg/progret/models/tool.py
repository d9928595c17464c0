from typing import Dict, Iterator, List, Optional

from pydantic import BaseModel, ConfigDict, PrivateAttr, field_validator, model_validator

FINISH_TOOL = "Finish"


class Tool(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    name: str = ""
    description: str

    @field_validator("id", "description")
    def validate_nonempty(cls, v, info):
        if not v.strip():
            raise ValueError(f"{info.field_name} must not be empty")
        return v

    def document(self) -> str:
        if not self.name:
            return self.description
        return f"{self.name} {self.description}"


class ToolCorpus(BaseModel):
    model_config = ConfigDict(frozen=True)

    tools: List[Tool] = []
    _index: Dict[str, Tool] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def check_unique_ids(self):
        seen = set()
        for tool in self.tools:
            if tool.id in seen:
                raise ValueError(f"duplicate tool id '{tool.id}'")
            seen.add(tool.id)
        return self

    def _lookup(self) -> Dict[str, Tool]:
        if len(self._index) != len(self.tools):
            self._index = {tool.id: tool for tool in self.tools}
        return self._index

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self) -> Iterator[Tool]:
        return iter(self.tools)

    def __contains__(self, tool_id: object) -> bool:
        return tool_id in self._lookup()

    def get(self, tool_id: str) -> Optional[Tool]:
        return self._lookup().get(tool_id)

    def ids(self) -> List[str]:
        return [tool.id for tool in self.tools]
