from typing import Any, Dict, List, Optional

from pydantic import BaseModel

REPORT_SCHEMA_VERSION = 1


class EvalReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    ks: List[int]
    query_count: int = 0
    recalls: Dict[str, Dict[int, float]] = {}
    per_query: Dict[str, Dict[str, Dict[int, float]]] = {}
    run_config: Optional[Dict[str, Any]] = None


class TrainReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    epoch_losses: List[float] = []
    head_shape: List[int] = []
    grad_check_error: Optional[float] = None
    run_config: Optional[Dict[str, Any]] = None


class ToolAccuracy(BaseModel):
    correct: int = 0
    total: int = 0


class PlannerReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    steps: int
    tool_accuracy: float
    tool_hallucination: float
    empty_rate: float
    wrong_existing_rate: float
    exact_match: float
    rouge_lsum: float
    per_tool: Dict[str, ToolAccuracy] = {}
    run_config: Optional[Dict[str, Any]] = None
