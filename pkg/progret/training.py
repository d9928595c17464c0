import itertools
import logging
import math
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from progret.config import TrainingConfig
from progret.embedding import Encoder
from progret.errors import CorpusError, TrainingDivergenceError
from progret.models.query import ComplexQuery
from progret.models.report import TrainReport
from progret.models.tool import ToolCorpus

logger = logging.getLogger(__name__)


class ContrastivePair(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    i1_base: np.ndarray
    i2_base: np.ndarray
    label: int
    tool_id: str = ""


def contrastive_loss(d: float, label: int, margin: float) -> float:
    if label == 1:
        return 0.5 * d * d
    hinge = max(0.0, margin - d)
    return 0.5 * hinge * hinge


def _coefficients(distances: np.ndarray, labels: np.ndarray, margin: float, epsilon: float):
    # dL/dW = coef * (I1 - I2)(g - h)^T
    active = (labels == 0) & (distances < margin)
    coef = np.where(labels == 1, 1.0, 0.0)
    coef = np.where(active, -(margin - distances) / np.maximum(distances, epsilon), coef)
    return coef


def pair_loss_and_gradient(
    pair: ContrastivePair, head: np.ndarray, margin: float, epsilon: float = 1e-12
) -> Tuple[float, np.ndarray]:
    x = pair.i1_base - pair.i2_base
    z = head @ x
    distance = float(np.linalg.norm(z))
    loss = contrastive_loss(distance, pair.label, margin)
    coef = _coefficients(np.array([distance]), np.array([pair.label]), margin, epsilon)[0]
    return loss, coef * np.outer(z, x)


def batch_loss_and_gradient(
    pairs: Sequence[ContrastivePair], head: np.ndarray, margin: float, epsilon: float = 1e-12
) -> Tuple[float, np.ndarray]:
    """Mean loss and mean gradient over a batch, computed in one pass."""
    x = np.stack([p.i1_base - p.i2_base for p in pairs])
    labels = np.array([p.label for p in pairs])
    z = x @ head.T
    distances = np.linalg.norm(z, axis=1)
    hinge = np.maximum(0.0, margin - distances)
    losses = np.where(labels == 1, 0.5 * distances**2, 0.5 * hinge**2)
    coef = _coefficients(distances, labels, margin, epsilon)
    gradient = (coef[:, None] * z).T @ x / len(pairs)
    return float(losses.mean()), gradient


def build_batches(
    queries: Sequence[ComplexQuery],
    corpus: ToolCorpus,
    base,
    config: TrainingConfig,
    rng: np.random.Generator,
) -> Iterator[List[ContrastivePair]]:
    """One batch per (query, step): the positive followed by b-1 sampled negatives."""
    n_negatives = config.batch_size - 1
    if len(corpus) < config.batch_size:
        raise CorpusError(
            f"corpus of {len(corpus)} tools cannot supply {n_negatives} negatives"
        )
    documents: Dict[str, np.ndarray] = {}

    def tool_base(tool_id: str) -> np.ndarray:
        if tool_id not in documents:
            tool = corpus.get(tool_id)
            if tool is None:
                raise CorpusError(f"unknown tool '{tool_id}' in training data")
            documents[tool_id] = base(tool.document())
        return documents[tool_id]

    all_ids = corpus.ids()
    for query in queries:
        plan = set(query.gt_plan)
        candidates = [tool_id for tool_id in all_ids if tool_id not in plan]
        if len(candidates) < n_negatives:
            raise CorpusError(
                f"query {query.id}: only {len(candidates)} irrelevant tools for "
                f"{n_negatives} negatives"
            )
        state = base(query.text)
        for tool_id in query.gt_plan:
            picks = rng.choice(len(candidates), size=n_negatives, replace=False)
            batch = [ContrastivePair(i1_base=state, i2_base=tool_base(tool_id), label=1, tool_id=tool_id)]
            for index in picks:
                negative = candidates[int(index)]
                batch.append(
                    ContrastivePair(
                        i1_base=state, i2_base=tool_base(negative), label=0, tool_id=negative
                    )
                )
            yield batch
            # later steps start from the ground-truth prefix already subtracted
            state = state - tool_base(tool_id)


def initial_head(d_in: int, d_out: Optional[int], rng: np.random.Generator) -> np.ndarray:
    d_out = d_out or d_in
    if d_out == d_in:
        return np.eye(d_in)
    return rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)


def sgd_step(
    head: np.ndarray,
    pairs: Sequence[ContrastivePair],
    config: TrainingConfig,
    epoch: int = 0,
    batch_index: int = 0,
) -> Tuple[np.ndarray, float]:
    """One plain SGD update on the batch-mean loss; returns the new head and the loss."""
    loss, gradient = batch_loss_and_gradient(pairs, head, config.margin, config.distance_epsilon)
    if not math.isfinite(loss) or not np.all(np.isfinite(gradient)):
        raise TrainingDivergenceError(epoch, batch_index, loss)
    return head - config.learning_rate * gradient, loss


def train(
    queries: Sequence[ComplexQuery],
    corpus: ToolCorpus,
    base,
    config: TrainingConfig,
) -> Tuple[Encoder, TrainReport]:
    if not queries:
        raise ValueError("training needs at least one query")
    rng = np.random.default_rng(config.seed)
    head = initial_head(base.dimension, config.d_out, rng)
    epoch_losses = []
    batch: List[ContrastivePair] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(queries))
        batch_losses = []
        batches = build_batches([queries[i] for i in order], corpus, base, config, rng)
        for batch_index, batch in enumerate(batches):
            head, loss = sgd_step(head, batch, config, epoch, batch_index)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        epoch_losses.append(epoch_loss)
        logger.info("epoch %d mean loss %.6f over %d batches", epoch, epoch_loss, len(batch_losses))
    grad_check_error = None
    if config.grad_check_pairs:
        sample = batch[: config.grad_check_pairs]
        grad_check_error = grad_check(
            sample, head, config.margin, max_entries=config.grad_check_entries
        )
        logger.info("gradient check over %d pairs: max relative error %.3g", len(sample), grad_check_error)
    report = TrainReport(
        epoch_losses=epoch_losses,
        head_shape=list(head.shape),
        grad_check_error=grad_check_error,
    )
    return Encoder(base, head), report


GradientFn = Callable[[ContrastivePair, np.ndarray, float], Tuple[float, np.ndarray]]


def _checked_entries(head: np.ndarray, x: np.ndarray, max_entries: Optional[int]):
    if max_entries is None:
        return np.ndindex(*head.shape)
    # rows with the largest activations against the nonzero input columns
    rows = np.argsort(-np.abs(head @ x), kind="stable")
    columns = np.flatnonzero(x)
    entries = ((int(i), int(j)) for i in rows for j in columns)
    return itertools.islice(entries, max_entries)


def grad_check(
    pairs: Sequence[ContrastivePair],
    head: np.ndarray,
    margin: float,
    fd_step: float = 1e-6,
    gradient_fn: GradientFn = pair_loss_and_gradient,
    max_entries: Optional[int] = None,
) -> float:
    """Max relative error of the analytic gradient against central differences.

    Every entry of the head is checked unless `max_entries` limits each pair
    to that many entries. The error of one entry is |a - f| / max(|a|, |f|, 1e-12),
    so entries where both sides vanish contribute zero.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    head = np.array(head, dtype=np.float64)
    worst = 0.0
    for pair in pairs:
        _, analytic = gradient_fn(pair, head, margin)
        x = pair.i1_base - pair.i2_base
        for index in _checked_entries(head, x, max_entries):
            original = head[index]
            head[index] = original + fd_step
            upper = contrastive_loss(float(np.linalg.norm(head @ x)), pair.label, margin)
            head[index] = original - fd_step
            lower = contrastive_loss(float(np.linalg.norm(head @ x)), pair.label, margin)
            head[index] = original
            numeric = (upper - lower) / (2.0 * fd_step)
            a = float(analytic[index])
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, error)
    return worst
