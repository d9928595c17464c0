import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from rouge_score import rouge_scorer

from progret.embedding import Encoder, cosine_similarity, embed
from progret.errors import EvaluationError, ProgretError
from progret.lexical import tokenize
from progret.models.interaction import (
    HistoryEntry,
    Interaction,
    PlannerPrediction,
    Role,
    Target,
    UnrolledInstance,
)
from progret.models.query import ComplexQuery, DecomposedQuery
from progret.models.report import EvalReport, PlannerReport, ToolAccuracy
from progret.models.tool import FINISH_TOOL, Tool, ToolCorpus
from progret.progressive import Ranked, interleave_ranked

logger = logging.getLogger(__name__)

DEFAULT_KS = [6, 10, 15, 20]
VARIANT_TOOLS = "T"
VARIANT_TOOLS_HISTORY = "T+H"
DEFAULT_INSTRUCTION = (
    "You are a planner. Given the request, the API candidates and the history of "
    "previous steps, choose the next API to call and write the call."
)
CANDIDATE_STRATEGIES = ["oracle", "oracle-random", "retrieved", "retrieved-inject"]


def recall_at_k(retrieved: Sequence[str], gt_plan, k: int) -> float:
    gold = set(gt_plan)
    if not gold:
        raise EvaluationError("ground-truth plan is empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    return len(set(retrieved[:k]) & gold) / len(gold)


def evaluate_retriever(
    retriever,
    queries: Sequence[ComplexQuery],
    ks: Sequence[int] = DEFAULT_KS,
    workers: int = 1,
) -> EvalReport:
    ks = sorted(set(ks))
    depth = max(ks)

    def run(query: ComplexQuery) -> Tuple[str, Dict[int, float]]:
        try:
            retrieved = retriever.retrieve(query, depth)
        except EvaluationError:
            raise
        except ProgretError as e:
            raise EvaluationError(str(e), query.id) from e
        return query.id, {k: recall_at_k(retrieved, query.gt_plan, k) for k in ks}

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(run, queries))
    else:
        rows = [run(query) for query in queries]
    per_query = dict(sorted(rows, key=lambda row: row[0]))
    means = {}
    for k in ks:
        values = [recalls[k] for recalls in per_query.values()]
        means[k] = float(np.mean(values)) if values else 0.0
    logger.info("evaluated %s on %d queries", retriever.name, len(per_query))
    return EvalReport(
        ks=ks,
        query_count=len(per_query),
        recalls={retriever.name: means},
        per_query={retriever.name: per_query},
    )


def merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    merged = EvalReport(ks=reports[0].ks if reports else DEFAULT_KS)
    for report in reports:
        merged.recalls.update(report.recalls)
        merged.per_query.update(report.per_query)
        merged.query_count = max(merged.query_count, report.query_count)
    return merged


def td_search(decomposed: DecomposedQuery, base_retriever, k: int) -> Ranked:
    """Retrieve per subquery and interleave the lists; each id keeps its first score."""
    per_subquery = [base_retriever.search(text, k) for text in decomposed.subqueries]
    return interleave_ranked(per_subquery, k)


def td_retrieve(decomposed: DecomposedQuery, base_retriever, k: int) -> List[str]:
    return [tool_id for tool_id, _ in td_search(decomposed, base_retriever, k)]


def unroll_interaction(interaction: Interaction) -> List[UnrolledInstance]:
    if interaction.assistant_count == 0:
        raise EvaluationError("interaction has no assistant steps", interaction.query_id)
    instances = []
    history: List[HistoryEntry] = []
    request = interaction.full_query
    for step in interaction.steps:
        if step.role == Role.SYSTEM:
            continue
        if step.role == Role.USER:
            request = f"{request}\n{step.text}"
        elif step.role == Role.ASSISTANT:
            instances.append(
                UnrolledInstance(
                    query_id=interaction.query_id,
                    step_index=len(instances),
                    request=request,
                    history=list(history),
                    target=Target(tool_id=step.tool_id, text=step.text),
                )
            )
        history.append(HistoryEntry(role=step.role, text=step.text))
    return instances


def serialize_history(history: Sequence[HistoryEntry]) -> str:
    return "\n".join(f"{entry.role.value}: {entry.text}" for entry in history)


def _candidate_line(tool: Tool, metadata: str) -> str:
    name = tool.name or tool.id
    if metadata == "name":
        return f"- {name}"
    return f"- {name}: {tool.description}"


def build_prompt(
    instance: UnrolledInstance,
    candidates: Sequence[Tool],
    variant: str = VARIANT_TOOLS_HISTORY,
    shuffle_seed: int = 0,
    metadata: str = "name",
    instruction: str = DEFAULT_INSTRUCTION,
) -> str:
    if variant not in (VARIANT_TOOLS, VARIANT_TOOLS_HISTORY):
        raise ValueError(f"unknown prompt variant '{variant}'")
    if metadata not in ("name", "name+description"):
        raise ValueError(f"unknown candidate metadata '{metadata}'")
    if not candidates:
        raise ValueError("prompt needs at least one candidate")
    order = np.random.default_rng(shuffle_seed).permutation(len(candidates))
    sections = [
        f"### Instruction:\n{instruction}",
        f"### Request:\n{instance.request}",
        "### API candidates:\n"
        + "\n".join(_candidate_line(candidates[int(i)], metadata) for i in order),
    ]
    if variant == VARIANT_TOOLS_HISTORY:
        sections.append(f"### History:\n{serialize_history(instance.history)}")
    return "\n\n".join(sections) + "\n"


def candidate_set(
    strategy: str,
    gt_plan: Sequence[str],
    corpus: ToolCorpus,
    k: int,
    rng: np.random.Generator,
    retrieved: Sequence[str] = (),
    current_tool: Optional[str] = None,
) -> List[str]:
    """Tool ids offered to the planner for one step."""
    if strategy == "oracle":
        return list(dict.fromkeys(gt_plan))
    if strategy == "oracle-random":
        plan = list(dict.fromkeys(gt_plan))
        if k < len(plan):
            raise ValueError(f"k={k} is smaller than the plan length {len(plan)}")
        pool = [tool_id for tool_id in corpus.ids() if tool_id not in set(plan)]
        extra = rng.choice(len(pool), size=min(k - len(plan), len(pool)), replace=False)
        return plan + [pool[int(i)] for i in extra]
    if strategy == "retrieved":
        return list(retrieved[:k])
    if strategy == "retrieved-inject":
        chosen = list(retrieved[:k])
        if current_tool is not None and current_tool not in chosen:
            if len(chosen) == k:
                chosen[-1] = current_tool
            else:
                chosen.append(current_tool)
        return chosen
    raise ValueError(f"unknown candidate strategy '{strategy}'")


def prompt_length_stats(prompts: Sequence[str], context_window: int = 2048) -> Dict[str, float]:
    lengths = np.array([len(p.split()) for p in prompts], dtype=np.float64)
    over = int((lengths > context_window).sum())
    return {
        "count": len(prompts),
        "mean_tokens": float(lengths.mean()) if len(prompts) else 0.0,
        "over_window": over,
        "over_window_fraction": over / len(prompts) if prompts else 0.0,
    }


def _align(preds: Sequence[PlannerPrediction], instances: Sequence[UnrolledInstance]):
    targets = {instance.key: instance for instance in instances}
    by_key = {}
    for pred in preds:
        if pred.key not in targets:
            raise EvaluationError(f"prediction for unknown step {pred.step_index}", pred.query_id)
        by_key[pred.key] = pred
    return [(instance, by_key.get(instance.key)) for instance in instances]


def _predicted_tool(pred: Optional[PlannerPrediction]) -> str:
    return pred.tool.strip() if pred is not None else ""


def tool_accuracy(preds: Sequence[PlannerPrediction], instances: Sequence[UnrolledInstance]) -> float:
    pairs = _align(preds, instances)
    if not pairs:
        return 0.0
    correct = sum(1 for inst, pred in pairs if _predicted_tool(pred) == inst.target.tool_id)
    return 100.0 * correct / len(pairs)


def tool_hallucination(preds: Sequence[PlannerPrediction], corpus: ToolCorpus) -> float:
    if not preds:
        return 0.0
    invented = sum(1 for pred in preds if _predicted_tool(pred) and _predicted_tool(pred) not in corpus)
    return 100.0 * invented / len(preds)


def exact_match(pred_text: str, target_text: str) -> int:
    return int(pred_text.strip() == target_text.strip())


class _Tokenizer:
    """Adapter so ROUGE splits words exactly as retrieval does."""

    def tokenize(self, text: str) -> List[str]:
        return tokenize(text)


_ROUGE_LSUM = rouge_scorer.RougeScorer(["rougeLsum"], use_stemmer=False, tokenizer=_Tokenizer())


def rouge_lsum(pred_text: str, target_text: str) -> float:
    """Summary-level ROUGE-L F1 with newline sentence splitting."""
    pred_empty = not tokenize(pred_text)
    target_empty = not tokenize(target_text)
    if pred_empty and target_empty:
        return 1.0
    if pred_empty or target_empty:
        return 0.0
    return _ROUGE_LSUM.score(target_text, pred_text)["rougeLsum"].fmeasure


def per_tool_accuracy(
    preds: Sequence[PlannerPrediction], instances: Sequence[UnrolledInstance]
) -> Dict[str, ToolAccuracy]:
    table: Dict[str, ToolAccuracy] = {}
    for instance, pred in _align(preds, instances):
        entry = table.setdefault(instance.target.tool_id, ToolAccuracy())
        entry.total += 1
        if _predicted_tool(pred) == instance.target.tool_id:
            entry.correct += 1
    return dict(sorted(table.items()))


def planner_report(
    preds: Sequence[PlannerPrediction],
    instances: Sequence[UnrolledInstance],
    corpus: ToolCorpus,
) -> PlannerReport:
    pairs = _align(preds, instances)
    steps = len(pairs)
    if steps == 0:
        raise EvaluationError("no unrolled steps to score")
    empty = wrong_existing = invented = 0
    em_total = rouge_total = 0.0
    for instance, pred in pairs:
        tool = _predicted_tool(pred)
        text = pred.text if pred is not None else ""
        if not tool:
            empty += 1
        elif tool not in corpus:
            invented += 1
        elif tool != instance.target.tool_id:
            wrong_existing += 1
        em_total += exact_match(text, instance.target.text)
        rouge_total += rouge_lsum(text, instance.target.text)
    per_tool = per_tool_accuracy(preds, instances)
    finish = per_tool.get(FINISH_TOOL)
    if finish is not None:
        logger.info("%s accuracy %d/%d", FINISH_TOOL, finish.correct, finish.total)
    return PlannerReport(
        steps=steps,
        tool_accuracy=tool_accuracy(preds, instances),
        tool_hallucination=100.0 * invented / steps,
        empty_rate=100.0 * empty / steps,
        wrong_existing_rate=100.0 * wrong_existing / steps,
        exact_match=em_total / steps,
        rouge_lsum=rouge_total / steps,
        per_tool=per_tool,
    )


def similarity_profile(
    encoder: Encoder, queries: Sequence[ComplexQuery], corpus: ToolCorpus, mode: str = "progressive"
) -> List[float]:
    """Cosine between each ground-truth tool and the full query or the progressive state."""
    if mode not in ("full", "progressive"):
        raise ValueError(f"unknown similarity mode '{mode}'")
    values = []
    for query in queries:
        state = embed(encoder, query.text)
        for tool_id in query.gt_plan:
            tool_vector = embed(encoder, corpus.get(tool_id).document())
            values.append(cosine_similarity(state, tool_vector))
            if mode == "progressive":
                state = state - tool_vector
    return values


def format_recall_table(report: EvalReport) -> str:
    header = ["Method"] + [f"K={k}" for k in report.ks]
    rows = [header]
    for method, recalls in report.recalls.items():
        rows.append([method] + [f"{100.0 * recalls[k]:.2f}" for k in report.ks])
    return _format_rows(rows)


def format_planner_table(reports: Dict[str, PlannerReport]) -> str:
    rows = [["Setting", "EM", "RLSum", "TA (%)", "TH (%)"]]
    for name, report in reports.items():
        rows.append(
            [
                name,
                f"{report.exact_match:.4f}",
                f"{report.rouge_lsum:.4f}",
                f"{report.tool_accuracy:.2f}",
                f"{report.tool_hallucination:.2f}",
            ]
        )
    return _format_rows(rows)


def _format_rows(rows: List[List[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
