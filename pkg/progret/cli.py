import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from progret.config import METHODS, METRICS, RunConfig
from progret.corpus import (
    dataset_stats,
    load_corpus,
    load_decompositions,
    load_interactions,
    load_predictions,
    load_queries,
    tool_frequencies,
    write_jsonl,
)
from progret.embedding import (
    Encoder,
    HashedFeaturizer,
    TableFeaturizer,
    build_store,
    load_head,
    load_store,
    save_head,
    save_store,
)
from progret.errors import ProgretError
from progret.evaluation import (
    CANDIDATE_STRATEGIES,
    DEFAULT_INSTRUCTION,
    build_prompt,
    candidate_set,
    evaluate_retriever,
    format_planner_table,
    format_recall_table,
    merge_reports,
    planner_report,
    prompt_length_stats,
    unroll_interaction,
)
from progret.models.interaction import PromptRecord
from progret.models.query import ComplexQuery
from progret.retrievers.factory import RetrieverFactory
from progret.synthdata import generate, write_dataset
from progret.training import train

logger = logging.getLogger(__name__)

REQUIRED_PATHS = {
    "index": ["corpus", "store"],
    "train": ["corpus", "queries", "head"],
    "retrieve": ["corpus"],
    "eval": ["corpus"],
    "synth": ["output"],
    "stats": ["corpus", "queries"],
    "prompts": ["corpus", "interactions", "output"],
}

EXIT_USAGE = 2
EXIT_MISSING_FILE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="progret", description="Progressive tool retrieval toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    paths = _Parser(add_help=False)
    for name in (
        "corpus",
        "queries",
        "decompositions",
        "interactions",
        "predictions",
        "embeddings",
        "store",
        "head",
        "output",
        "instruction-file",
    ):
        paths.add_argument(f"--{name}")

    retrieval = _Parser(add_help=False)
    retrieval.add_argument("--method", dest="methods", action="append", choices=METHODS)
    retrieval.add_argument("--k", type=int, default=10)
    retrieval.add_argument("--ks", type=lambda s: [int(v) for v in s.split(",")])
    retrieval.add_argument("--metric", choices=METRICS, default="l2-asc")
    retrieval.add_argument("--max-steps", type=int, default=6)
    retrieval.add_argument("--hash-dim", type=int, default=1024)
    retrieval.add_argument("--workers", type=int, default=1)

    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)

    sub.add_parser("index", parents=[paths, retrieval, common], help="build a vector store")

    train_parser = sub.add_parser("train", parents=[paths, retrieval, common], help="train the head")
    train_parser.add_argument("--margin", type=float, default=0.3)
    train_parser.add_argument("--batch-size", type=int, default=8)
    train_parser.add_argument("--learning-rate", type=float, default=0.05)
    train_parser.add_argument("--epochs", type=int, default=5)
    train_parser.add_argument("--grad-check-pairs", type=int, default=0)

    retrieve = sub.add_parser("retrieve", parents=[paths, retrieval, common], help="rank tools")
    retrieve.add_argument("--query")
    retrieve.add_argument("--query-id")

    sub.add_parser("eval", parents=[paths, retrieval, common], help="evaluate retrieval or plans")

    synth = sub.add_parser("synth", parents=[paths, common], help="generate synthetic data")
    synth.add_argument("--n-tools", type=int, default=200)
    synth.add_argument("--n-queries", type=int, default=300)
    synth.add_argument("--min-subtasks", type=int, default=2)
    synth.add_argument("--max-subtasks", type=int, default=4)
    synth.add_argument("--overlap-rate", type=float, default=0.3)
    synth.add_argument("--train-fraction", type=float, default=0.8)
    synth.add_argument("--batch-size", type=int, default=8)

    sub.add_parser("stats", parents=[paths, common], help="dataset statistics")

    prompts = sub.add_parser("prompts", parents=[paths, retrieval, common], help="planner prompts")
    prompts.add_argument("--strategy", choices=CANDIDATE_STRATEGIES, default="retrieved")
    prompts.add_argument("--variant", choices=["T", "T+H"], default="T+H")
    prompts.add_argument("--candidate-metadata", choices=["name", "name+description"], default="name")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {k: v for k, v in vars(args).items() if v is not None and k != "verbose"}
    if "min_subtasks" in values or "max_subtasks" in values:
        values["subtask_range"] = (values.pop("min_subtasks", 2), values.pop("max_subtasks", 4))
    try:
        config = RunConfig(**values)
    except ValidationError as e:
        raise UsageError("; ".join(err["msg"] for err in e.errors())) from None
    missing = [name for name in REQUIRED_PATHS[config.subcommand] if getattr(config, name) is None]
    if missing:
        raise UsageError(f"{config.subcommand} requires --{', --'.join(missing)}")
    return config


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def _emit_report(config: RunConfig, report) -> str:
    report.run_config = config.model_dump(mode="json")
    payload = report.model_dump_json(indent=2) + "\n"
    if config.output:
        _write_text(config.output, payload)
        logger.info("wrote report to %s", config.output)
    return payload


def _encoder(config: RunConfig, load_trained: bool = True) -> Encoder:
    if config.embeddings:
        base = TableFeaturizer.from_jsonl(config.embeddings)
    else:
        base = HashedFeaturizer(config.hash_dim)
    if load_trained and config.head:
        return Encoder(base, load_head(config.head))
    return Encoder.identity(base)


def _factory(config: RunConfig, corpus, needs_vectors: bool) -> RetrieverFactory:
    encoder = store = None
    if needs_vectors:
        encoder = _encoder(config)
        store = load_store(config.store) if config.store else build_store(encoder, corpus)
    decompositions = load_decompositions(config.decompositions) if config.decompositions else None
    return RetrieverFactory(
        corpus,
        encoder=encoder,
        store=store,
        decompositions=decompositions,
        max_steps=config.max_steps,
        metric=config.metric,
    )


def _needs_vectors(methods: List[str]) -> bool:
    return any(method in ("ss", "td-ss", "protip") for method in methods)


def run_index(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    save_store(build_store(_encoder(config), corpus), config.store)
    print(f"indexed {len(corpus)} tools into {config.store}")
    return 0


def run_train(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    queries, _ = load_queries(config.queries, corpus)
    encoder, report = train(queries, corpus, _encoder(config, load_trained=False).base, config.training_config())
    save_head(encoder.head, config.head)
    sys.stdout.write(_emit_report(config, report))
    return 0


def run_retrieve(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    query = None
    if config.query_id:
        if not config.queries:
            raise UsageError("--query-id requires --queries")
        queries, _ = load_queries(config.queries, corpus)
        query = next((q for q in queries if q.id == config.query_id), None)
        if query is None:
            raise UsageError(f"unknown query id '{config.query_id}'")
    elif config.query is not None:
        query = ComplexQuery(id="", text=config.query)
    else:
        raise UsageError("retrieve requires --query or --query-id")
    method = config.methods[0]
    retriever = _factory(config, corpus, _needs_vectors([method])).create(method)
    # interleaved methods report the score from the step that first ranked each tool
    ranked = retriever.retrieve_ranked(query, config.k)
    for rank, (tool_id, score) in enumerate(ranked, start=1):
        print(f"{rank}\t{tool_id}\t{score:.6f}")
    return 0


def run_eval(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    if config.predictions or config.interactions:
        if not (config.predictions and config.interactions):
            raise UsageError("planner evaluation requires --predictions and --interactions")
        instances = [i for it in load_interactions(config.interactions) for i in unroll_interaction(it)]
        report = planner_report(load_predictions(config.predictions), instances, corpus)
        _emit_report(config, report)
        sys.stdout.write(format_planner_table({config.predictions: report}))
        return 0
    if not config.queries:
        raise UsageError("retrieval evaluation requires --queries")
    queries, _ = load_queries(config.queries, corpus)
    factory = _factory(config, corpus, _needs_vectors(config.methods))
    reports = [
        evaluate_retriever(factory.create(method), queries, config.ks, config.workers)
        for method in config.methods
    ]
    report = merge_reports(reports)
    _emit_report(config, report)
    sys.stdout.write(format_recall_table(report))
    return 0


def run_synth(config: RunConfig) -> int:
    corpus, queries, decompositions = generate(config.synth_config())
    write_dataset(
        config.output,
        corpus,
        queries,
        decompositions,
        config.train_fraction,
        config.sub_seed("shuffle"),
    )
    print(f"wrote {len(corpus)} tools and {len(queries)} queries to {config.output}")
    return 0


def run_stats(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    queries, cleaning = load_queries(config.queries, corpus)
    payload = {
        "stats": dataset_stats(queries).model_dump(mode="json"),
        "cleaning": cleaning.model_dump(mode="json"),
        "tool_frequencies": dict(tool_frequencies(queries).most_common()),
    }
    print(json.dumps(payload, indent=2))
    return 0


def run_prompts(config: RunConfig) -> int:
    corpus = load_corpus(config.corpus)
    instruction = DEFAULT_INSTRUCTION
    if config.instruction_file:
        instruction = Path(config.instruction_file).read_text(encoding="utf-8").strip()
    retriever = None
    if config.strategy.startswith("retrieved"):
        method = config.methods[0]
        retriever = _factory(config, corpus, _needs_vectors([method])).create(method)
    rng = np.random.default_rng(config.sub_seed("candidates"))
    shuffle_seed = config.sub_seed("shuffle")
    records = []
    for interaction in load_interactions(config.interactions):
        instances = unroll_interaction(interaction)
        plan = [instance.target.tool_id for instance in instances]
        retrieved = []
        if retriever is not None:
            query = ComplexQuery(id=interaction.query_id, text=interaction.full_query, gt_plan=plan)
            retrieved = retriever.retrieve(query, config.k)
        for instance in instances:
            ids = candidate_set(
                config.strategy, plan, corpus, config.k, rng, retrieved, instance.target.tool_id
            )
            tools = [corpus.get(tool_id) for tool_id in ids if tool_id in corpus]
            prompt = build_prompt(
                instance,
                tools,
                config.variant,
                shuffle_seed + instance.step_index,
                config.candidate_metadata,
                instruction,
            )
            records.append(
                PromptRecord(
                    query_id=instance.query_id,
                    step_index=instance.step_index,
                    candidates=ids,
                    prompt=prompt,
                )
            )
    write_jsonl(config.output, records)
    print(json.dumps(prompt_length_stats([r.prompt for r in records]), indent=2))
    return 0


COMMANDS = {
    "index": run_index,
    "train": run_train,
    "retrieve": run_retrieve,
    "eval": run_eval,
    "synth": run_synth,
    "stats": run_stats,
    "prompts": run_prompts,
}


def _fail(kind: str, message: str, status: int) -> int:
    message = " ".join(str(message).split())
    print(f"error={kind} message={message}", file=sys.stderr)
    return status


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
            format="%(levelname)s %(name)s: %(message)s",
        )
        config = resolve_config(args)
        return COMMANDS[config.subcommand](config)
    except UsageError as e:
        return _fail("usage", e, EXIT_USAGE)
    except FileNotFoundError as e:
        return _fail("missing-file", f"{e.filename}: {e.strerror}", EXIT_MISSING_FILE)
    except ProgretError as e:
        return _fail(e.kind, e, e.exit_status)
    except (ValueError, NotImplementedError) as e:
        return _fail("usage", e, EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
