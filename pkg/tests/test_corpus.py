import tempfile
import unittest
from pathlib import Path

from progret.corpus import (
    clean_queries,
    dataset_stats,
    load_corpus,
    load_decompositions,
    load_queries,
    tool_frequencies,
    write_jsonl,
)
from progret.errors import CorpusError, ParseError
from progret.models.query import ComplexQuery, RemovalReason

FIXTURES = Path(__file__).parent / "fixtures"


class TestLoadCorpus(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, name, text):
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def test_load_three_rows(self):
        path = self.write(
            "tools.jsonl",
            '{"id": "t1", "name": "a", "description": "first tool"}\n'
            '{"id": "t2", "description": "second tool"}\n'
            '{"id": "t3", "name": "c", "description": "third tool"}\n',
        )

        corpus = load_corpus(path)

        self.assertEqual(len(corpus), 3)
        self.assertEqual(corpus.ids(), ["t1", "t2", "t3"])
        self.assertEqual(corpus.get("t2").name, "")
        self.assertIn("t3", corpus)

    def test_duplicate_id(self):
        path = self.write(
            "tools.jsonl",
            '{"id": "t1", "description": "one"}\n{"id": "t1", "description": "again"}\n',
        )

        with self.assertRaises(CorpusError) as ctx:
            load_corpus(path)

        self.assertIn("t1", str(ctx.exception))

    def test_empty_file(self):
        corpus = load_corpus(self.write("tools.jsonl", ""))

        self.assertEqual(len(corpus), 0)

    def test_malformed_line_reports_line_number(self):
        path = self.write(
            "tools.jsonl", '{"id": "t1", "description": "one"}\n{"id": "t2", \n'
        )

        with self.assertRaises(ParseError) as ctx:
            load_corpus(path)

        self.assertEqual(ctx.exception.line, 2)

    def test_invalid_utf8_reports_line_number(self):
        path = self.dir / "tools.jsonl"
        path.write_bytes(
            b'{"id": "t1", "description": "one"}\n'
            b'{"id": "t2", "description": "bad \xff\xfe bytes"}\n'
        )

        with self.assertRaises(ParseError) as ctx:
            load_corpus(path)

        self.assertEqual(ctx.exception.line, 2)
        self.assertIn("UTF-8", str(ctx.exception))

    def test_non_ascii_text_loads(self):
        path = self.write("tools.jsonl", '{"id": "t1", "description": "météo à Zürich"}\n')

        corpus = load_corpus(path)

        self.assertEqual(corpus.get("t1").description, "météo à Zürich")

    def test_missing_description_is_a_parse_error(self):
        path = self.write("tools.jsonl", '{"id": "t1"}\n')

        with self.assertRaises(ParseError) as ctx:
            load_corpus(path)

        self.assertEqual(ctx.exception.line, 1)

    def test_loading_is_deterministic(self):
        first = load_corpus(FIXTURES / "bm25_tools.jsonl")
        second = load_corpus(FIXTURES / "bm25_tools.jsonl")

        self.assertEqual(first, second)


class TestLoadQueries(unittest.TestCase):
    def setUp(self):
        self.corpus = load_corpus(FIXTURES / "bm25_tools.jsonl")

    def test_unknown_and_empty_plans_are_removed(self):
        kept, report = load_queries(FIXTURES / "queries_dirty.jsonl", self.corpus)

        self.assertEqual([q.id for q in kept], ["ok"])
        self.assertEqual(report.removed_query_ids, ["bad", "empty"])
        self.assertEqual(report.reasons["bad"], RemovalReason.UNKNOWN_TOOL)
        self.assertEqual(report.reasons["empty"], RemovalReason.EMPTY_PLAN)
        self.assertEqual(
            report.unknown_tools["bad"], ["invalid_hallucination_function_name"]
        )

    def test_valid_plans_leave_report_empty(self):
        queries = [
            ComplexQuery(id="a", text="x", gt_plan=["t1"]),
            ComplexQuery(id="b", text="y", gt_plan=["t2", "t3"]),
        ]

        kept, report = clean_queries(queries, self.corpus)

        self.assertEqual(kept, queries)
        self.assertTrue(report.is_empty())

    def test_too_many_subtasks(self):
        query = ComplexQuery(id="long", text="x", gt_plan=["t1", "t2", "t3", "t4", "t5", "t1", "t2"])

        kept, report = clean_queries([query], self.corpus)

        self.assertEqual(kept, [])
        self.assertEqual(report.reasons["long"], RemovalReason.TOO_MANY_SUBTASKS)

    def test_cleaning_is_idempotent(self):
        kept, _ = load_queries(FIXTURES / "queries_dirty.jsonl", self.corpus)

        again, report = clean_queries(kept, self.corpus)

        self.assertEqual(again, kept)
        self.assertTrue(report.is_empty())


class TestDatasetStats(unittest.TestCase):
    def queries(self, lengths):
        return [
            ComplexQuery(id=f"q{i}", text="x", gt_plan=[f"t{j}" for j in range(n)])
            for i, n in enumerate(lengths)
        ]

    def test_mean_and_histogram(self):
        stats = dataset_stats(self.queries([2, 3, 4]))

        self.assertEqual(stats.count, 3)
        self.assertEqual(stats.mean, 3.0)
        self.assertEqual(stats.histogram, {1: 0, 2: 1, 3: 1, 4: 1})

    def test_single_plan(self):
        stats = dataset_stats(self.queries([6]))

        self.assertEqual(stats.mean, 6.0)
        self.assertEqual(stats.std, 0.0)

    def test_empty(self):
        stats = dataset_stats([])

        self.assertEqual(stats.count, 0)
        self.assertIsNone(stats.mean)
        self.assertIsNone(stats.std)

    def test_tool_frequencies(self):
        queries = [
            ComplexQuery(id="a", text="x", gt_plan=["t1", "t2"]),
            ComplexQuery(id="b", text="y", gt_plan=["t1"]),
        ]

        self.assertEqual(tool_frequencies(queries), {"t1": 2, "t2": 1})


class TestJsonl(unittest.TestCase):
    def test_write_then_load_decompositions(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "decompositions.jsonl"
            path.parent.mkdir()
            path.write_text(
                '{"query_id": "q1", "subqueries": ["a", "b"]}\n'
                '{"query_id": "q2", "subqueries": ["c"]}\n',
                encoding="utf-8",
            )

            decompositions = load_decompositions(path)

            self.assertEqual(sorted(decompositions), ["q1", "q2"])
            self.assertEqual(decompositions["q1"].subqueries, ["a", "b"])

    def test_write_uses_lf_and_skips_none(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "out" / "queries.jsonl"

            write_jsonl(path, [ComplexQuery(id="q", text="t", gt_plan=["a"])])

            self.assertEqual(
                path.read_bytes(), b'{"id":"q","text":"t","gt_plan":["a"]}\n'
            )


if __name__ == "__main__":
    unittest.main()
