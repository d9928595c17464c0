import math
import re
from collections import Counter
from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict

from progret.config import Bm25Config
from progret.models.tool import ToolCorpus

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercase and keep runs of Unicode letters and digits."""
    return _TOKEN.findall(text.lower())


class Bm25Index(BaseModel):
    model_config = ConfigDict(frozen=True)

    k1: float
    b: float
    n_docs: int
    avgdl: float
    doc_freq: Dict[str, int]
    term_counts: Dict[str, Dict[str, int]]
    doc_lengths: Dict[str, int]

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, tool_id: str, query_tokens: List[str]) -> float:
        counts = self.term_counts[tool_id]
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_lengths[tool_id] / self.avgdl)
        total = 0.0
        for term in query_tokens:
            freq = counts.get(term, 0)
            if freq == 0:
                continue
            total += self.idf(term) * freq * (self.k1 + 1.0) / (freq + norm)
        return total


def build_bm25_index(corpus: ToolCorpus, config: Bm25Config = None) -> Bm25Index:
    config = config or Bm25Config()
    term_counts = {}
    doc_lengths = {}
    doc_freq = Counter()
    for tool in corpus:
        tokens = tokenize(tool.document())
        counts = Counter(tokens)
        term_counts[tool.id] = dict(counts)
        doc_lengths[tool.id] = len(tokens)
        doc_freq.update(counts.keys())
    n_docs = len(corpus)
    total_length = sum(doc_lengths.values())
    avgdl = total_length / n_docs if n_docs and total_length else 1.0
    return Bm25Index(
        k1=config.k1,
        b=config.b,
        n_docs=n_docs,
        avgdl=avgdl,
        doc_freq=dict(doc_freq),
        term_counts=term_counts,
        doc_lengths=doc_lengths,
    )


def bm25_topk(index: Bm25Index, query_text: str, k: int) -> List[Tuple[str, float]]:
    if k < 1:
        raise ValueError("k must be at least 1")
    # repeated query terms count once per occurrence, as in Okapi BM25
    query_tokens = [t for t in tokenize(query_text) if t in index.doc_freq]
    if not query_tokens:
        return []
    scored = []
    for tool_id in index.term_counts:
        score = index.score(tool_id, query_tokens)
        if score > 0.0:
            scored.append((tool_id, score))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]
