"""Synthetic toolboxes and multi-subtask queries with known ground truth."""

import itertools
import logging
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from progret.config import SynthConfig
from progret.corpus import write_jsonl
from progret.errors import VocabularyExhaustedError
from progret.models.query import ComplexQuery, DecomposedQuery
from progret.models.tool import Tool, ToolCorpus

logger = logging.getLogger(__name__)


def _families(members: List[int], size: int) -> List[List[int]]:
    return [members[start : start + size] for start in range(0, len(members), size)]


def generate(config: SynthConfig) -> Tuple[ToolCorpus, List[ComplexQuery], List[DecomposedQuery]]:
    """Toolbox of lead and follow-up tools plus queries that chain them.

    Every plan starts with a lead tool, whose description is long, and
    continues with distinct follow-up tools with short descriptions. Tools
    of one role are grouped into families that share a block of distractor
    tokens; the rest of each description is unique to the tool. A query
    concatenates the full descriptions of its plan with filler tokens, so
    its hashed embedding is exactly the sum of its parts.
    """
    rng = np.random.default_rng(config.seed)
    order = [int(i) for i in rng.permutation(config.n_tools)]
    n_lead = config.n_lead_tools()
    layout = []
    needed = 0
    for members, length in (
        (order[:n_lead], config.lead_tokens_per_tool),
        (order[n_lead:], config.tokens_per_tool),
    ):
        n_core, n_shared = config.split_tokens(length)
        families = _families(members, config.family_size)
        layout.append((families, n_core, n_shared))
        needed += len(members) * n_core + len(families) * n_shared
    if needed > config.vocabulary_size:
        raise VocabularyExhaustedError(
            f"need {needed} distinct tokens but vocabulary_size is {config.vocabulary_size}"
        )
    vocabulary = iter([f"w{index:06d}" for index in rng.permutation(config.vocabulary_size)[:needed]])

    descriptions = {}
    for families, n_core, n_shared in layout:
        for family in families:
            shared = list(itertools.islice(vocabulary, n_shared))
            for index in family:
                tokens = list(itertools.islice(vocabulary, n_core)) + shared
                descriptions[index] = " ".join(tokens[int(i)] for i in rng.permutation(len(tokens)))
    tools = [
        Tool(id=f"tool_{index:04d}", description=descriptions[index])
        for index in range(config.n_tools)
    ]
    corpus = ToolCorpus(tools=tools)
    leads = [tools[index] for index in order[:n_lead]]
    follow_ups = [tools[index] for index in order[n_lead:]]
    fillers = [f"f{index:04d}" for index in range(config.filler_vocabulary_size)]

    low, high = config.subtask_range
    queries = []
    decompositions = []
    for index in range(config.n_queries):
        n_subtasks = int(rng.integers(low, high + 1))
        plan = [leads[int(rng.integers(len(leads)))]]
        picks = rng.choice(len(follow_ups), size=n_subtasks - 1, replace=False)
        plan.extend(follow_ups[int(i)] for i in picks)
        parts = []
        for tool in plan:
            parts.append(tool.description)
            if config.filler_per_subtask and fillers:
                glue = rng.choice(len(fillers), size=config.filler_per_subtask)
                parts.append(" ".join(fillers[int(i)] for i in glue))
        query_id = f"q{index:05d}"
        queries.append(
            ComplexQuery(id=query_id, text=" ".join(parts), gt_plan=[tool.id for tool in plan])
        )
        decompositions.append(
            DecomposedQuery(query_id=query_id, subqueries=[tool.description for tool in plan])
        )
    logger.info(
        "generated %d tools (%d lead) and %d queries", len(corpus), n_lead, len(queries)
    )
    return corpus, queries, decompositions


def split(
    queries: Sequence[ComplexQuery], train_fraction: float, seed: int
) -> Tuple[List[ComplexQuery], List[ComplexQuery]]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(queries))
    n_train = int(round(train_fraction * len(queries)))
    train = [queries[int(i)] for i in order[:n_train]]
    test = [queries[int(i)] for i in order[n_train:]]
    return train, test


def write_dataset(
    output_dir,
    corpus: ToolCorpus,
    queries: Sequence[ComplexQuery],
    decompositions: Sequence[DecomposedQuery],
    train_fraction: float = 0.8,
    seed: int = 0,
) -> Path:
    output_dir = Path(output_dir)
    train, test = split(queries, train_fraction, seed)
    write_jsonl(output_dir / "tools.jsonl", corpus)
    write_jsonl(output_dir / "queries.jsonl", queries)
    write_jsonl(output_dir / "train.jsonl", train)
    write_jsonl(output_dir / "test.jsonl", test)
    write_jsonl(output_dir / "decompositions.jsonl", decompositions)
    logger.info("wrote synthetic dataset to %s", output_dir)
    return output_dir
