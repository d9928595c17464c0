from typing import Dict, Optional

from progret.config import MAX_SUBTASKS, Bm25Config
from progret.embedding import COSINE_DESC, L2_ASC, embed, nearest_topk
from progret.errors import DimensionMismatchError
from progret.lexical import bm25_topk, build_bm25_index
from progret.models.query import DecomposedQuery
from progret.models.tool import ToolCorpus

from .base import ProgressiveRetriever, Retriever

METHODS_CONFIG = {
    "bm25": {"search": "lexical"},
    "td-bm25": {"search": "lexical", "decompose": True},
    "ss": {"search": "dense", "metric": COSINE_DESC},
    "td-ss": {"search": "dense", "metric": COSINE_DESC, "decompose": True},
    "protip": {"search": "progressive"},
}


class RetrieverFactory:
    def __init__(
        self,
        corpus: ToolCorpus,
        encoder=None,
        store=None,
        decompositions: Optional[Dict[str, DecomposedQuery]] = None,
        bm25_config: Optional[Bm25Config] = None,
        max_steps: int = MAX_SUBTASKS,
        metric: str = L2_ASC,
    ):
        self.corpus = corpus
        self.encoder = encoder
        self.store = store
        self.decompositions = decompositions
        self.bm25_config = bm25_config or Bm25Config()
        self.max_steps = max_steps
        self.metric = metric
        self._bm25_index = None

    def _is_method_known(self, method: str):
        return method in METHODS_CONFIG

    def _lexical_search(self):
        if self._bm25_index is None:
            self._bm25_index = build_bm25_index(self.corpus, self.bm25_config)
        index = self._bm25_index
        return lambda text, k: bm25_topk(index, text, k)

    def _dense_search(self, metric: str):
        self._require_vectors("dense")
        encoder, store = self.encoder, self.store
        return lambda text, k: nearest_topk(store, embed(encoder, text), k, metric)

    def _require_vectors(self, method: str):
        if self.encoder is None or self.store is None:
            raise ValueError(f"method '{method}' needs an encoder and a vector store")
        if self.store.dimension != self.encoder.dimension:
            raise DimensionMismatchError(
                f"store dimension {self.store.dimension} does not match "
                f"encoder dimension {self.encoder.dimension}; rebuild the store with this head"
            )

    def create(self, method: str) -> Retriever:
        if not self._is_method_known(method):
            raise NotImplementedError(f"The retrieval method '{method}' is not supported")
        config = METHODS_CONFIG[method]
        if config["search"] == "progressive":
            self._require_vectors(method)
            return ProgressiveRetriever(
                method, self.encoder, self.store, self.max_steps, self.metric, self.corpus
            )
        if config["search"] == "lexical":
            search = self._lexical_search()
        else:
            search = self._dense_search(config["metric"])
        decompositions = None
        if config.get("decompose"):
            if self.decompositions is None:
                raise ValueError(f"method '{method}' needs decompositions")
            decompositions = self.decompositions
        return Retriever(method, search, decompositions)
