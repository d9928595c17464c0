import unittest

import numpy as np

from progret.config import TrainingConfig
from progret.embedding import HashedFeaturizer, TableFeaturizer
from progret.errors import CorpusError
from progret.models.query import ComplexQuery
from progret.models.tool import Tool, ToolCorpus
from progret.training import (
    ContrastivePair,
    batch_loss_and_gradient,
    build_batches,
    contrastive_loss,
    grad_check,
    pair_loss_and_gradient,
    sgd_step,
    train,
)


def _pair(x, label):
    x = np.asarray(x, dtype=np.float64)
    return ContrastivePair(i1_base=x, i2_base=np.zeros_like(x), label=label)


def _signed(rng, size, low=0.5, high=1.5):
    return rng.uniform(low, high, size) * rng.choice([-1.0, 1.0], size)


class TestContrastiveLoss(unittest.TestCase):
    def test_point_values(self):
        self.assertAlmostEqual(contrastive_loss(0.0, 1, 0.3), 0.0, delta=1e-12)
        self.assertAlmostEqual(contrastive_loss(0.5, 0, 0.3), 0.0, delta=1e-12)
        self.assertAlmostEqual(contrastive_loss(0.5, 1, 0.3), 0.125, delta=1e-12)
        self.assertAlmostEqual(contrastive_loss(0.1, 0, 0.3), 0.02, delta=1e-12)

    def test_continuous_at_margin(self):
        self.assertAlmostEqual(contrastive_loss(0.3 - 1e-9, 0, 0.3), 0.0, delta=1e-12)
        self.assertEqual(contrastive_loss(0.3, 0, 0.3), 0.0)

    def test_positive_loss_grows_with_distance(self):
        distances = np.linspace(0.0, 2.0, 41)

        losses = [contrastive_loss(float(d), 1, 0.3) for d in distances]

        self.assertTrue(all(b > a for a, b in zip(losses, losses[1:])))

    def test_negative_loss_never_grows_with_distance(self):
        distances = np.linspace(0.0, 2.0, 41)

        losses = [contrastive_loss(float(d), 0, 0.3) for d in distances]

        self.assertTrue(all(b <= a for a, b in zip(losses, losses[1:])))
        self.assertEqual(losses[-1], 0.0)


class TestGradient(unittest.TestCase):
    def test_inactive_negative_has_zero_gradient(self):
        loss, gradient = pair_loss_and_gradient(_pair([1.0, 1.0], 0), np.eye(2), 0.3)

        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(gradient, np.zeros((2, 2)))

    def test_matched_positive(self):
        pair = ContrastivePair(i1_base=np.ones(3), i2_base=np.ones(3), label=1)

        loss, gradient = pair_loss_and_gradient(pair, np.eye(3), 0.3)

        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(gradient, np.zeros((3, 3)))

    def test_negative_at_zero_distance_is_finite(self):
        loss, gradient = pair_loss_and_gradient(_pair(np.zeros(2), 0), np.eye(2), 0.3)

        self.assertAlmostEqual(loss, 0.045, delta=1e-12)
        self.assertTrue(np.all(np.isfinite(gradient)))

    def test_batch_matches_mean_of_pairs(self):
        rng = np.random.default_rng(5)
        head = rng.standard_normal((3, 4))
        pairs = [_pair(0.1 * rng.standard_normal(4), label) for label in (1, 0, 0, 0)]

        loss, gradient = batch_loss_and_gradient(pairs, head, 0.3)

        singles = [pair_loss_and_gradient(p, head, 0.3) for p in pairs]
        self.assertAlmostEqual(loss, np.mean([s[0] for s in singles]), delta=1e-12)
        np.testing.assert_allclose(gradient, np.mean([s[1] for s in singles], axis=0), atol=1e-12)

    def test_batch_order_does_not_matter(self):
        rng = np.random.default_rng(11)
        head = rng.standard_normal((3, 5))
        pairs = [_pair(0.1 * rng.standard_normal(5), label) for label in (1, 0, 0, 0, 0, 0, 0, 0)]
        shuffled = [pairs[i] for i in rng.permutation(len(pairs))]

        loss, gradient = batch_loss_and_gradient(pairs, head, 0.3)
        shuffled_loss, shuffled_gradient = batch_loss_and_gradient(shuffled, head, 0.3)

        self.assertAlmostEqual(loss, shuffled_loss, delta=1e-12)
        np.testing.assert_allclose(gradient, shuffled_gradient, rtol=0, atol=1e-12)


class TestSgdStep(unittest.TestCase):
    def test_matched_positives_leave_head_unchanged(self):
        rng = np.random.default_rng(4)
        head = rng.standard_normal((4, 4))
        x = rng.standard_normal(4)
        pairs = [ContrastivePair(i1_base=x, i2_base=x.copy(), label=1) for _ in range(3)]

        updated, loss = sgd_step(head, pairs, TrainingConfig(learning_rate=0.5))

        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(updated, head)

    def test_step_moves_against_the_gradient(self):
        head = np.eye(2)
        pairs = [_pair([1.0, 0.0], 1), _pair([5.0, 5.0], 0)]

        updated, loss = sgd_step(head, pairs, TrainingConfig(learning_rate=0.1))

        # mean gradient is outer(e1, e1) / 2
        self.assertAlmostEqual(loss, 0.25, delta=1e-12)
        np.testing.assert_allclose(updated, np.diag([0.95, 1.0]), atol=1e-12)


class TestGradCheck(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(2024)
        self.d = 4
        self.head = np.diag(_signed(rng, self.d))
        # D well inside the hinge for negatives, near zero and large for positives
        self.pairs = [
            _pair(0.05 * _signed(rng, self.d), 0),
            _pair(0.05 * _signed(rng, self.d), 0),
            _pair(1e-3 * _signed(rng, self.d), 1),
            _pair(_signed(rng, self.d), 1),
        ]

    def test_analytic_gradient_matches_finite_differences(self):
        self.assertLess(grad_check(self.pairs, self.head, 0.3), 1e-5)

    def test_all_inactive_sample(self):
        pairs = [_pair([1.0, -1.0], 0), _pair([2.0, 0.5], 0)]

        self.assertEqual(grad_check(pairs, np.eye(2), 0.3), 0.0)

    def test_planted_scaling_bug_is_caught(self):
        def doubled(pair, head, margin):
            loss, gradient = pair_loss_and_gradient(pair, head, margin)
            return loss, 2.0 * gradient

        error = grad_check(self.pairs, self.head, 0.3, gradient_fn=doubled)

        # |2f - f| / max(|2f|, |f|) on every entry with a nonzero gradient
        self.assertGreater(error, 1e-5)
        self.assertAlmostEqual(error, 0.5, delta=1e-3)

    def test_limited_entries_check_the_largest_rows(self):
        error = grad_check(self.pairs, self.head, 0.3, max_entries=3)

        self.assertLess(error, 1e-5)

    def test_limited_entries_still_catch_the_scaling_bug(self):
        def doubled(pair, head, margin):
            loss, gradient = pair_loss_and_gradient(pair, head, margin)
            return loss, 2.0 * gradient

        error = grad_check(self.pairs, self.head, 0.3, gradient_fn=doubled, max_entries=2)

        self.assertAlmostEqual(error, 0.5, delta=1e-3)

    def test_rejects_nonpositive_step(self):
        with self.assertRaises(ValueError):
            grad_check(self.pairs, self.head, 0.3, fd_step=0.0)


class _Fixture:
    @staticmethod
    def corpus(n_tools=12):
        return ToolCorpus(
            tools=[
                Tool(id=f"t{i:02d}", description=f"word{i} extra{i} common")
                for i in range(n_tools)
            ]
        )

    @staticmethod
    def queries():
        return [
            ComplexQuery(id="q1", text="word0 extra0 and word1 extra1", gt_plan=["t00", "t01"]),
            ComplexQuery(id="q2", text="word2 extra2 then word3", gt_plan=["t02", "t03"]),
            ComplexQuery(id="q3", text="word4 extra4 word5 word6", gt_plan=["t04", "t05", "t06"]),
        ]


class TestBuildBatches(unittest.TestCase):
    def setUp(self):
        self.corpus = _Fixture.corpus()
        self.base = HashedFeaturizer(64)

    def batches(self, queries, batch_size=4, seed=0):
        config = TrainingConfig(batch_size=batch_size, seed=seed)
        rng = np.random.default_rng(seed)
        return list(build_batches(queries, self.corpus, self.base, config, rng))

    def test_pair_counts(self):
        query = _Fixture.queries()[0]

        batches = self.batches([query])

        pairs = [pair for batch in batches for pair in batch]
        self.assertEqual(len(batches), 2)
        self.assertEqual(len(pairs), 8)
        self.assertEqual(sum(pair.label for pair in pairs), 2)

    def test_negatives_are_irrelevant_tools(self):
        for query in _Fixture.queries():
            for batch in self.batches([query]):
                self.assertEqual(batch[0].label, 1)
                self.assertIn(batch[0].tool_id, query.gt_plan)
                negatives = [pair.tool_id for pair in batch[1:]]
                self.assertEqual(len(set(negatives)), len(negatives))
                self.assertFalse(set(negatives) & set(query.gt_plan))

    def test_later_steps_subtract_the_ground_truth_prefix(self):
        query = _Fixture.queries()[0]

        batches = self.batches([query])

        expected = self.base(query.text) - self.base(self.corpus.get("t00").document())
        np.testing.assert_array_equal(batches[1][0].i1_base, expected)

    def test_same_seed_same_batches(self):
        first = self.batches(_Fixture.queries(), seed=3)
        second = self.batches(_Fixture.queries(), seed=3)

        self.assertEqual(
            [[p.tool_id for p in batch] for batch in first],
            [[p.tool_id for p in batch] for batch in second],
        )

    def test_corpus_smaller_than_batch(self):
        self.corpus = _Fixture.corpus(3)

        with self.assertRaises(CorpusError):
            self.batches(_Fixture.queries()[:1], batch_size=4)


class TestTrain(unittest.TestCase):
    def setUp(self):
        self.corpus = _Fixture.corpus()
        self.base = HashedFeaturizer(64)
        self.queries = _Fixture.queries()

    def test_zero_learning_rate_keeps_initial_head(self):
        config = TrainingConfig(batch_size=4, learning_rate=0.0, epochs=2)

        encoder, report = train(self.queries, self.corpus, self.base, config)

        np.testing.assert_array_equal(encoder.head, np.eye(64))
        self.assertEqual(report.head_shape, [64, 64])
        self.assertEqual(len(report.epoch_losses), 2)

    def test_same_seed_same_report(self):
        config = TrainingConfig(batch_size=4, learning_rate=0.01, epochs=2, seed=9)

        first_encoder, first = train(self.queries, self.corpus, self.base, config)
        second_encoder, second = train(self.queries, self.corpus, self.base, config)

        self.assertEqual(first, second)
        np.testing.assert_array_equal(first_encoder.head, second_encoder.head)

    def test_reduced_output_dimension(self):
        config = TrainingConfig(batch_size=4, learning_rate=0.01, epochs=1, d_out=16)

        encoder, report = train(self.queries, self.corpus, self.base, config)

        self.assertEqual(encoder.dimension, 16)
        self.assertEqual(report.head_shape, [16, 64])

    def test_matched_positives_train_to_the_initial_head(self):
        # one-hot documents keep every negative at distance sqrt(2), outside the margin
        dimension = 6
        table = {f"d{i}": np.eye(dimension)[i] for i in range(dimension)}
        corpus = ToolCorpus(tools=[Tool(id=f"t{i}", description=f"d{i}") for i in range(dimension)])
        queries = [ComplexQuery(id=f"q{i}", text=f"d{i}", gt_plan=[f"t{i}"]) for i in range(dimension)]
        config = TrainingConfig(batch_size=4, learning_rate=0.5, epochs=3)

        encoder, report = train(queries, corpus, TableFeaturizer(table), config)

        np.testing.assert_array_equal(encoder.head, np.eye(dimension))
        self.assertEqual(report.epoch_losses, [0.0, 0.0, 0.0])

    def test_gradient_check_is_reported_when_requested(self):
        config = TrainingConfig(
            batch_size=4, learning_rate=0.01, epochs=2, grad_check_pairs=4, grad_check_entries=8
        )

        _, report = train(self.queries, self.corpus, self.base, config)

        self.assertIsNotNone(report.grad_check_error)
        self.assertLess(report.grad_check_error, 1e-5)

    def test_gradient_check_is_off_by_default(self):
        config = TrainingConfig(batch_size=4, learning_rate=0.01, epochs=1)

        _, report = train(self.queries, self.corpus, self.base, config)

        self.assertIsNone(report.grad_check_error)

    def test_requires_queries(self):
        with self.assertRaises(ValueError):
            train([], self.corpus, self.base, TrainingConfig(batch_size=4))


if __name__ == "__main__":
    unittest.main()
