import hashlib
import logging
import struct
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from progret.corpus import iter_jsonl
from progret.errors import (
    DimensionMismatchError,
    MissingEmbeddingError,
    ParseError,
    StoreFormatError,
)
from progret.lexical import tokenize
from progret.models.tool import ToolCorpus

logger = logging.getLogger(__name__)

STORE_MAGIC = b"PRGS"
HEAD_MAGIC = b"PRGH"
FORMAT_VERSION = 1

L2_ASC = "l2-asc"
COSINE_DESC = "cosine-desc"


class HashedFeaturizer:
    """Signed hashed bag of words: each token adds +1 or -1 to one dimension."""

    def __init__(self, dimension: int, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be at least 1")
        self.dimension = dimension
        self.seed = seed
        self._slots: Dict[str, Tuple[int, float]] = {}

    def slot(self, token: str) -> Tuple[int, float]:
        cached = self._slots.get(token)
        if cached is None:
            digest = hashlib.blake2b(
                f"{self.seed}:{token}".encode("utf-8"), digest_size=16
            ).digest()
            index = int.from_bytes(digest[:8], "little") % self.dimension
            sign = 1.0 if digest[8] & 1 else -1.0
            cached = (index, sign)
            self._slots[token] = cached
        return cached

    def __call__(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            index, sign = self.slot(token)
            vector[index] += sign
        return vector


class TableFeaturizer:
    """Precomputed base vectors keyed by text or tool id."""

    def __init__(self, table: Dict[str, np.ndarray]):
        dimensions = {len(v) for v in table.values()}
        if len(dimensions) > 1:
            raise DimensionMismatchError(f"table mixes dimensions {sorted(dimensions)}")
        self.table = {key: np.asarray(v, dtype=np.float64) for key, v in table.items()}
        self.dimension = dimensions.pop() if dimensions else 0

    @classmethod
    def from_jsonl(cls, path) -> "TableFeaturizer":
        table = {}
        for number, row in iter_jsonl(path):
            key, vector = row.get("key"), row.get("vector")
            if not isinstance(key, str) or not isinstance(vector, list):
                raise ParseError("expected fields 'key' and 'vector'", str(path), number)
            values = np.asarray(vector, dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise ParseError(f"non-finite value in vector for '{key}'", str(path), number)
            table[key] = values
        return cls(table)

    def __call__(self, text: str) -> np.ndarray:
        try:
            return self.table[text].copy()
        except KeyError:
            raise MissingEmbeddingError(f"no base embedding for {text!r}") from None


class Encoder:
    """Frozen base featurizer followed by a bias-free linear head."""

    def __init__(self, base, head: np.ndarray):
        head = np.asarray(head, dtype=np.float64)
        if head.ndim != 2 or head.shape[1] != base.dimension:
            raise DimensionMismatchError(
                f"head shape {head.shape} does not match base dimension {base.dimension}"
            )
        if not np.all(np.isfinite(head)):
            raise ValueError("head entries must be finite")
        self.base = base
        self.head = head

    @classmethod
    def identity(cls, base) -> "Encoder":
        return cls(base, np.eye(base.dimension))

    @property
    def dimension(self) -> int:
        return self.head.shape[0]

    def project(self, base_vector: np.ndarray) -> np.ndarray:
        return self.head @ base_vector

    def with_head(self, head: np.ndarray) -> "Encoder":
        return Encoder(self.base, head)


def embed(encoder: Encoder, text: str) -> np.ndarray:
    return encoder.project(encoder.base(text))


def _check_dimensions(u: np.ndarray, v: np.ndarray):
    if u.shape != v.shape:
        raise DimensionMismatchError(f"dimension mismatch: {u.shape} vs {v.shape}")


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dimensions(u, v)
    norm = np.linalg.norm(u) * np.linalg.norm(v)
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / norm, -1.0, 1.0))


def l2_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_dimensions(u, v)
    return float(np.linalg.norm(u - v))


class VectorStore:
    """One float32 vector per tool id, kept in insertion order."""

    def __init__(self, ids: Sequence[str], vectors, dimension: Optional[int] = None):
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise ValueError("vector store ids must be unique")
        matrix = np.asarray(vectors, dtype=np.float32)
        if not ids:
            matrix = np.zeros((0, dimension or 0), dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise DimensionMismatchError("vector store needs one row per id")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("vector store entries must be finite")
        self.ids = ids
        self.matrix = matrix
        self.dimension = matrix.shape[1]
        self._rows = {tool_id: row for row, tool_id in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, tool_id: object) -> bool:
        return tool_id in self._rows

    def vector(self, tool_id: str) -> np.ndarray:
        return self.matrix[self._rows[tool_id]].astype(np.float64)


def build_store(encoder: Encoder, corpus: ToolCorpus) -> VectorStore:
    vectors = [embed(encoder, tool.document()) for tool in corpus]
    store = VectorStore(corpus.ids(), vectors, dimension=encoder.dimension)
    logger.info("built vector store with %d tools, dimension %d", len(store), store.dimension)
    return store


def nearest_topk(
    store: VectorStore,
    vector,
    k: int,
    metric: str = L2_ASC,
    exclude: Iterable[str] = (),
) -> List[Tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(store) == 0:
        return []
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (store.dimension,):
        raise DimensionMismatchError(
            f"query vector dimension {vector.shape} does not match store dimension {store.dimension}"
        )
    matrix = store.matrix.astype(np.float64)
    if metric == L2_ASC:
        scores = np.linalg.norm(matrix - vector, axis=1)
        sign = 1.0
    elif metric == COSINE_DESC:
        norms = np.linalg.norm(matrix, axis=1) * np.linalg.norm(vector)
        dots = matrix @ vector
        scores = np.divide(dots, norms, out=np.zeros_like(dots), where=norms != 0.0)
        sign = -1.0
    else:
        raise ValueError(f"unknown metric '{metric}'")
    excluded = set(exclude)
    ranked = sorted(
        (
            (tool_id, float(scores[row]))
            for row, tool_id in enumerate(store.ids)
            if tool_id not in excluded
        ),
        key=lambda item: (sign * item[1], item[0]),
    )
    return ranked[:k]


def _write_header(handle, magic: bytes, *fields: int):
    handle.write(magic)
    handle.write(struct.pack("<" + "I" * (len(fields) + 1), FORMAT_VERSION, *fields))


def _read_exact(handle, size: int) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise StoreFormatError("file is truncated")
    return data


def _read_header(handle, magic: bytes, n_fields: int) -> Tuple[int, ...]:
    if _read_exact(handle, len(magic)) != magic:
        raise StoreFormatError("bad magic bytes")
    values = struct.unpack("<" + "I" * (n_fields + 1), _read_exact(handle, 4 * (n_fields + 1)))
    if values[0] != FORMAT_VERSION:
        raise StoreFormatError(f"unsupported format version {values[0]}")
    return values[1:]


def save_store(store: VectorStore, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        _write_header(handle, STORE_MAGIC, store.dimension, len(store))
        for row, tool_id in enumerate(store.ids):
            encoded = tool_id.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(store.matrix[row].astype("<f4").tobytes())


def load_store(path) -> VectorStore:
    with Path(path).open("rb") as handle:
        dimension, count = _read_header(handle, STORE_MAGIC, 2)
        ids = []
        rows = []
        for _ in range(count):
            (length,) = struct.unpack("<H", _read_exact(handle, 2))
            ids.append(_read_exact(handle, length).decode("utf-8"))
            rows.append(np.frombuffer(_read_exact(handle, 4 * dimension), dtype="<f4"))
        if handle.read(1):
            raise StoreFormatError("trailing bytes after last row")
    return VectorStore(ids, np.array(rows, dtype=np.float32), dimension=dimension)


def save_head(head: np.ndarray, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = head.shape
    with path.open("wb") as handle:
        _write_header(handle, HEAD_MAGIC, rows, cols)
        handle.write(np.ascontiguousarray(head, dtype="<f8").tobytes())


def load_head(path) -> np.ndarray:
    with Path(path).open("rb") as handle:
        rows, cols = _read_header(handle, HEAD_MAGIC, 2)
        data = _read_exact(handle, 8 * rows * cols)
        if handle.read(1):
            raise StoreFormatError("trailing bytes after head matrix")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(np.float64)
