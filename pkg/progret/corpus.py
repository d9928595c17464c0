import json
import logging
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable, Iterator, List, Tuple, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from progret.config import MAX_SUBTASKS
from progret.errors import CorpusError, ParseError
from progret.models.interaction import Interaction, PlannerPrediction
from progret.models.query import (
    CleaningReport,
    ComplexQuery,
    DatasetStats,
    DecomposedQuery,
    RemovalReason,
)
from progret.models.tool import Tool, ToolCorpus

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def iter_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """Yield (line number, object) for every nonblank line of a JSONL file."""
    path = Path(path)
    with path.open("rb") as handle:
        for number, raw in enumerate(handle, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(f"invalid UTF-8 at byte {e.start}", str(path), number) from e
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", str(path), number) from e
            if not isinstance(row, dict):
                raise ParseError("expected a JSON object", str(path), number)
            yield number, row


def load_models(path, model: type[M]) -> List[M]:
    items = []
    for number, row in iter_jsonl(path):
        try:
            items.append(model.model_validate(row))
        except ValidationError as e:
            message = "; ".join(err["msg"] for err in e.errors())
            raise ParseError(message, str(path), number) from e
    return items


def write_jsonl(path, rows: Iterable[BaseModel]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(row.model_dump_json(exclude_none=True))
            handle.write("\n")


def load_corpus(path) -> ToolCorpus:
    tools = load_models(path, Tool)
    seen = set()
    for tool in tools:
        if tool.id in seen:
            raise CorpusError(f"duplicate tool id '{tool.id}' in {path}")
        seen.add(tool.id)
    corpus = ToolCorpus(tools=tools)
    logger.info("loaded %d tools from %s", len(corpus), path)
    return corpus


def clean_queries(
    queries: List[ComplexQuery], corpus: ToolCorpus, max_subtasks: int = MAX_SUBTASKS
) -> Tuple[List[ComplexQuery], CleaningReport]:
    kept = []
    report = CleaningReport()
    for query in queries:
        if not query.gt_plan:
            report.add(query.id, RemovalReason.EMPTY_PLAN)
            continue
        unknown = [tool_id for tool_id in query.gt_plan if tool_id not in corpus]
        if unknown:
            report.add(query.id, RemovalReason.UNKNOWN_TOOL, unknown)
            continue
        if len(query.gt_plan) > max_subtasks:
            report.add(query.id, RemovalReason.TOO_MANY_SUBTASKS)
            continue
        kept.append(query)
    for query_id in report.removed_query_ids:
        logger.info("removed query %s: %s", query_id, report.reasons[query_id].value)
    return kept, report


def load_queries(
    path, corpus: ToolCorpus, max_subtasks: int = MAX_SUBTASKS
) -> Tuple[List[ComplexQuery], CleaningReport]:
    queries = load_models(path, ComplexQuery)
    kept, report = clean_queries(queries, corpus, max_subtasks)
    logger.info(
        "loaded %d queries from %s, removed %d", len(kept), path, len(report.removed_query_ids)
    )
    return kept, report


def _load_keyed(path, model, key: Callable) -> dict:
    items = {}
    for item in load_models(path, model):
        if key(item) in items:
            raise CorpusError(f"duplicate record for '{key(item)}' in {path}")
        items[key(item)] = item
    return items


def load_decompositions(path) -> dict[str, DecomposedQuery]:
    return _load_keyed(path, DecomposedQuery, lambda d: d.query_id)


def load_interactions(path) -> List[Interaction]:
    return load_models(path, Interaction)


def load_predictions(path) -> List[PlannerPrediction]:
    return load_models(path, PlannerPrediction)


def dataset_stats(queries: List[ComplexQuery]) -> DatasetStats:
    if not queries:
        return DatasetStats(count=0)
    lengths = np.array([len(q.gt_plan) for q in queries], dtype=np.float64)
    counts = Counter(len(q.gt_plan) for q in queries)
    histogram = {n: counts.get(n, 0) for n in range(1, int(lengths.max()) + 1)}
    return DatasetStats(
        count=len(queries),
        histogram=histogram,
        mean=float(lengths.mean()),
        std=float(lengths.std()),
    )


def tool_frequencies(queries: List[ComplexQuery]) -> Counter:
    return Counter(tool_id for query in queries for tool_id in query.gt_plan)
