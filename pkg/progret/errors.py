from typing import Optional


class ProgretError(ValueError):
    kind = "progret"
    exit_status = 1


class ParseError(ProgretError):
    kind = "parse"
    exit_status = 4

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class StoreFormatError(ProgretError):
    kind = "format"
    exit_status = 4


class CorpusError(ProgretError):
    kind = "corpus"
    exit_status = 5


class MissingEmbeddingError(ProgretError):
    kind = "missing-embedding"
    exit_status = 4


class DimensionMismatchError(ProgretError):
    kind = "dimension"
    exit_status = 4


class TrainingDivergenceError(ProgretError):
    kind = "divergence"
    exit_status = 6

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")


class EvaluationError(ProgretError):
    kind = "evaluation"
    exit_status = 7

    def __init__(self, message: str, query_id: Optional[str] = None):
        self.query_id = query_id
        prefix = f"query {query_id}: " if query_id is not None else ""
        super().__init__(f"{prefix}{message}")


class MissingDecompositionError(EvaluationError):
    kind = "missing-decomposition"

    def __init__(self, query_id: str):
        super().__init__("no decomposition available", query_id)


class VocabularyExhaustedError(ProgretError):
    kind = "vocabulary"
