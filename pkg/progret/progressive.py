import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from progret.config import MAX_SUBTASKS
from progret.embedding import L2_ASC, Encoder, VectorStore, embed, nearest_topk
from progret.errors import DimensionMismatchError
from progret.models.query import ComplexQuery
from progret.models.tool import Tool, ToolCorpus

logger = logging.getLogger(__name__)

Ranked = List[Tuple[str, float]]


class QueryState(BaseModel):
    """Retrieval-side query embedding after removing already handled tools."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    query_id: str
    i1: np.ndarray
    subtracted: Tuple[str, ...] = ()

    @field_validator("i1", mode="before")
    def validate_i1(cls, v):
        v = np.array(v, dtype=np.float64)
        v.setflags(write=False)
        return v

    @property
    def step_index(self) -> int:
        return len(self.subtracted)


class RetrievalResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    ranked: Ranked
    metric: str

    def ids(self) -> List[str]:
        return [tool_id for tool_id, _ in self.ranked]


def init_session(encoder: Encoder, query: ComplexQuery) -> QueryState:
    return QueryState(query_id=query.id, i1=embed(encoder, query.text))


def advance_with(state: QueryState, tool_id: str, tool_vector: np.ndarray) -> QueryState:
    """Subtract an already embedded tool, e.g. the one an executor actually ran."""
    tool_vector = np.asarray(tool_vector, dtype=np.float64)
    if tool_vector.shape != state.i1.shape:
        raise DimensionMismatchError(
            f"tool embedding {tool_vector.shape} does not match state {state.i1.shape}"
        )
    return QueryState(
        query_id=state.query_id,
        i1=state.i1 - tool_vector,
        subtracted=state.subtracted + (tool_id,),
    )


def advance(state: QueryState, encoder: Encoder, tool: Tool) -> QueryState:
    return advance_with(state, tool.id, embed(encoder, tool.document()))


def retrieve_step(
    state: QueryState, store: VectorStore, k: int, metric: str = L2_ASC
) -> RetrievalResult:
    ranked = nearest_topk(store, state.i1, k, metric, exclude=state.subtracted)
    return RetrievalResult(ranked=ranked, metric=metric)


def interleave_ranked(per_step: Sequence[Sequence[Tuple[str, float]]], k: int) -> Ranked:
    """Round-robin merge of scored lists; the first occurrence of an id keeps its score."""
    if k < 1:
        raise ValueError("k must be at least 1")
    merged = []
    seen = set()
    depth = max((len(ranked) for ranked in per_step), default=0)
    for position in range(depth):
        for ranked in per_step:
            if position >= len(ranked):
                continue
            tool_id, score = ranked[position]
            if tool_id in seen:
                continue
            seen.add(tool_id)
            merged.append((tool_id, score))
            if len(merged) == k:
                return merged
    return merged


def interleave(per_step_lists: Sequence[Sequence[str]], k: int) -> List[str]:
    ranked = interleave_ranked([[(tool_id, 0.0) for tool_id in ids] for ids in per_step_lists], k)
    return [tool_id for tool_id, _ in ranked]


def progressive_steps(
    encoder: Encoder,
    store: VectorStore,
    query: ComplexQuery,
    k: int,
    max_steps: int = MAX_SUBTASKS,
    metric: str = L2_ASC,
    corpus: Optional[ToolCorpus] = None,
) -> List[RetrievalResult]:
    """Per-step ranked lists, advancing by each step's rank-1 tool.

    With a corpus the winner is re-embedded at full precision, exactly as
    `advance` does. Without one the float32 store row is subtracted, so the
    state drifts from the float64 embedding by the store's rounding error.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    if len(store) == 0:
        return []
    if store.dimension != encoder.dimension:
        raise DimensionMismatchError(
            f"store dimension {store.dimension} does not match encoder dimension {encoder.dimension}"
        )
    state = init_session(encoder, query)
    results = []
    for step in range(max_steps):
        result = retrieve_step(state, store, k, metric)
        if not result.ranked:
            break
        results.append(result)
        winner = result.ranked[0][0]
        logger.debug("query %s step %d winner %s", query.id, step, winner)
        tool = corpus.get(winner) if corpus is not None else None
        if tool is not None:
            state = advance(state, encoder, tool)
        else:
            state = advance_with(state, winner, store.vector(winner))
    return results


def progressive_search(
    encoder: Encoder,
    store: VectorStore,
    query_text: str,
    k: int,
    max_steps: int = MAX_SUBTASKS,
    metric: str = L2_ASC,
    query_id: str = "",
    corpus: Optional[ToolCorpus] = None,
) -> Ranked:
    """Interleaved ids, each with the score it had in the step that first ranked it."""
    query = ComplexQuery(id=query_id, text=query_text)
    steps = progressive_steps(encoder, store, query, k, max_steps, metric, corpus)
    return interleave_ranked([result.ranked for result in steps], k)


def progressive_retrieve(
    encoder: Encoder,
    store: VectorStore,
    query_text: str,
    k: int,
    max_steps: int = MAX_SUBTASKS,
    metric: str = L2_ASC,
    query_id: str = "",
    corpus: Optional[ToolCorpus] = None,
) -> List[str]:
    ranked = progressive_search(encoder, store, query_text, k, max_steps, metric, query_id, corpus)
    return [tool_id for tool_id, _ in ranked]
