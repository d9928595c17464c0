import hashlib
from typing import List, Optional, Tuple

from pydantic import BaseModel, field_validator, model_validator

MAX_SUBTASKS = 6
METHODS = ["bm25", "ss", "td-bm25", "td-ss", "protip"]
METRICS = ["l2-asc", "cosine-desc"]


class Bm25Config(BaseModel):
    k1: float = 1.2
    b: float = 0.75

    @field_validator("k1")
    def validate_k1(cls, v):
        if v <= 0:
            raise ValueError("k1 must be positive")
        return v

    @field_validator("b")
    def validate_b(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("b must be in [0, 1]")
        return v


class TrainingConfig(BaseModel):
    margin: float = 0.3
    batch_size: int = 8
    learning_rate: float = 0.05
    epochs: int = 5
    seed: int = 0
    distance_epsilon: float = 1e-12
    d_out: Optional[int] = None
    grad_check_pairs: int = 0
    grad_check_entries: int = 64

    @field_validator("margin", "distance_epsilon")
    def validate_positive(cls, v, info):
        if v <= 0:
            raise ValueError(f"{info.field_name} must be positive")
        return v

    @field_validator("batch_size")
    def validate_batch_size(cls, v):
        # one positive plus at least one negative
        if v < 2:
            raise ValueError("batch_size must be at least 2")
        return v

    @field_validator("learning_rate")
    def validate_learning_rate(cls, v):
        if v < 0:
            raise ValueError("learning_rate must not be negative")
        return v

    @field_validator("epochs")
    def validate_epochs(cls, v):
        if v < 1:
            raise ValueError("epochs must be at least 1")
        return v

    @field_validator("grad_check_pairs")
    def validate_grad_check_pairs(cls, v):
        if v < 0:
            raise ValueError("grad_check_pairs must not be negative")
        return v

    @field_validator("grad_check_entries")
    def validate_grad_check_entries(cls, v):
        if v < 1:
            raise ValueError("grad_check_entries must be at least 1")
        return v


class SynthConfig(BaseModel):
    n_tools: int = 200
    n_queries: int = 300
    subtask_range: Tuple[int, int] = (2, 4)
    tokens_per_tool: int = 4
    lead_tokens_per_tool: int = 12
    lead_fraction: float = 0.2
    family_size: int = 8
    vocabulary_size: int = 5000
    overlap_rate: float = 0.3
    filler_per_subtask: int = 1
    filler_vocabulary_size: int = 50
    batch_size: int = 8
    seed: int = 0

    @field_validator("overlap_rate")
    def validate_overlap_rate(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("overlap_rate must be in [0, 1)")
        return v

    @field_validator("lead_fraction")
    def validate_lead_fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("lead_fraction must be in (0, 1)")
        return v

    @field_validator("tokens_per_tool", "lead_tokens_per_tool", "family_size")
    def validate_positive(cls, v, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @model_validator(mode="after")
    def check_ranges(self):
        low, high = self.subtask_range
        if low < 1 or high > MAX_SUBTASKS or low > high:
            raise ValueError(
                f"subtask_range must satisfy 1 <= min <= max <= {MAX_SUBTASKS}"
            )
        if self.n_tools < self.batch_size:
            raise ValueError("n_tools must be at least batch_size")
        if self.n_queries < 0:
            raise ValueError("n_queries must not be negative")
        # every plan is one lead tool followed by distinct follow-up tools
        if self.n_tools - self.n_lead_tools() < high - 1:
            raise ValueError("not enough follow-up tools for the longest plan")
        return self

    def n_lead_tools(self) -> int:
        return min(self.n_tools - 1, max(1, int(round(self.lead_fraction * self.n_tools))))

    def split_tokens(self, length: int) -> Tuple[int, int]:
        """(core, shared) token counts for a description of `length` tokens."""
        shared = int(round(self.overlap_rate * length))
        core = max(1, length - shared)
        return core, length - core


class RunConfig(BaseModel):
    subcommand: str
    corpus: Optional[str] = None
    queries: Optional[str] = None
    decompositions: Optional[str] = None
    interactions: Optional[str] = None
    predictions: Optional[str] = None
    embeddings: Optional[str] = None
    store: Optional[str] = None
    head: Optional[str] = None
    output: Optional[str] = None
    instruction_file: Optional[str] = None
    query: Optional[str] = None
    query_id: Optional[str] = None
    methods: List[str] = ["protip"]
    k: int = 10
    ks: List[int] = [6, 10, 15, 20]
    metric: str = "l2-asc"
    max_steps: int = MAX_SUBTASKS
    hash_dim: int = 1024
    margin: float = 0.3
    batch_size: int = 8
    learning_rate: float = 0.05
    epochs: int = 5
    grad_check_pairs: int = 0
    n_tools: int = 200
    n_queries: int = 300
    subtask_range: Tuple[int, int] = (2, 4)
    overlap_rate: float = 0.3
    train_fraction: float = 0.8
    strategy: str = "retrieved"
    variant: str = "T+H"
    candidate_metadata: str = "name"
    workers: int = 1
    seed: int = 0

    @field_validator("methods")
    def validate_methods(cls, v):
        unknown = [m for m in v if m not in METHODS]
        if not v or unknown:
            raise ValueError(f"method must be one of: {', '.join(METHODS)}")
        return v

    @field_validator("metric")
    def validate_metric(cls, v):
        if v not in METRICS:
            raise ValueError(f"metric must be one of: {', '.join(METRICS)}")
        return v

    @field_validator("k", "max_steps", "hash_dim")
    def validate_positive(cls, v, info):
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator("ks")
    def validate_ks(cls, v):
        if not v or any(k < 1 for k in v):
            raise ValueError("ks must be a nonempty list of positive integers")
        return sorted(set(v))

    def sub_seed(self, name: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{name}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            margin=self.margin,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            grad_check_pairs=self.grad_check_pairs,
            seed=self.sub_seed("train"),
        )

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_tools=self.n_tools,
            n_queries=self.n_queries,
            subtask_range=self.subtask_range,
            overlap_rate=self.overlap_rate,
            batch_size=self.batch_size,
            seed=self.sub_seed("synth"),
        )
