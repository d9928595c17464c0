from typing import Callable, Dict, List, Optional

from progret.errors import MissingDecompositionError
from progret.evaluation import td_search
from progret.models.query import ComplexQuery, DecomposedQuery
from progret.models.tool import ToolCorpus
from progret.progressive import Ranked, progressive_search


class Retriever:
    """A named retrieval method over one toolbox."""

    def __init__(
        self,
        name: str,
        search: Callable[[str, int], Ranked],
        decompositions: Optional[Dict[str, DecomposedQuery]] = None,
    ):
        self.name = name
        self._search = search
        self.decompositions = decompositions

    def search(self, text: str, k: int) -> Ranked:
        return self._search(text, k)

    def search_ids(self, text: str, k: int) -> List[str]:
        return [tool_id for tool_id, _ in self.search(text, k)]

    def retrieve_ranked(self, query: ComplexQuery, k: int) -> Ranked:
        if self.decompositions is None:
            return self.search(query.text, k)
        decomposed = self.decompositions.get(query.id)
        if decomposed is None:
            raise MissingDecompositionError(query.id)
        return td_search(decomposed, self, k)

    def retrieve(self, query: ComplexQuery, k: int) -> List[str]:
        return [tool_id for tool_id, _ in self.retrieve_ranked(query, k)]


class ProgressiveRetriever(Retriever):
    def __init__(
        self,
        name: str,
        encoder,
        store,
        max_steps: int,
        metric: str,
        corpus: Optional[ToolCorpus] = None,
    ):
        super().__init__(name, self._progressive_search)
        self.encoder = encoder
        self.store = store
        self.max_steps = max_steps
        self.metric = metric
        self.corpus = corpus

    def _progressive_search(self, text: str, k: int) -> Ranked:
        return progressive_search(
            self.encoder,
            self.store,
            text,
            k,
            self.max_steps,
            self.metric,
            corpus=self.corpus,
        )
