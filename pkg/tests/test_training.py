import math

import numpy as np
import pytest

from conceptsearch.embedding import TestEmbedProvider, cosine
from conceptsearch.training import (
    ConceptExample,
    FocalParams,
    LossReport,
    NegativeCandidate,
    NegativeProvenance,
    ToyConfig,
    alignment_loss,
    build_toy_dataset,
    focal_loss,
    gradient_relative_error,
    hardness_score,
    numeric_gradient,
    positive_negative_margins,
    select_hard_negatives,
    total_loss,
    toy_fit,
    toy_objective,
)


class StubReference:
    """Reference provider returning preset vectors per text (frozen g)."""

    dimension = 4
    fingerprint = "stub"

    def __init__(self, table):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def embed(self, request):  # pragma: no cover - not used
        raise NotImplementedError

    def embed_reference(self, text):
        return self.table[text]


def unit_at_cosine(c: float) -> np.ndarray:
    return np.array([c, math.sqrt(1.0 - c * c)])


def example_with(negatives, query_span=None, positive=None):
    return ConceptExample(
        query_text="q",
        query_span=np.array([1.0, 0.0]) if query_span is None else query_span,
        positive_span=np.array([1.0, 0.0]) if positive is None else positive,
        negatives=tuple(negatives),
    )


class TestFocalLoss:
    def test_reduces_to_half_bce_at_gamma_zero(self):
        rng = np.random.default_rng(50)
        params = FocalParams(alpha=0.5, gamma=0.0)
        for _ in range(200):
            n = int(rng.integers(1, 20))
            p = rng.uniform(1e-4, 1.0 - 1e-4, n)
            y = (rng.random(n) < 0.4).astype(float)
            bce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum()
            assert abs(focal_loss(p, y, params).value - 0.5 * bce) < 1e-12

    def test_single_token_scalar_value(self):
        report = focal_loss(np.array([0.9]), np.array([1.0]), FocalParams(alpha=0.5, gamma=2.0))
        expected = 0.5 * 0.1**2 * -math.log(0.9)
        assert abs(report.value - expected) < 1e-15
        assert abs(report.value - 5.268e-4) < 1e-6

    def test_perfect_prediction_drives_loss_to_zero(self):
        p = np.array([1.0 - 1e-12, 1e-12])
        y = np.array([1.0, 0.0])
        assert focal_loss(p, y, FocalParams()).value < 1e-10

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            focal_loss(np.array([0.0]), np.array([1.0]), FocalParams())
        with pytest.raises(ValueError):
            focal_loss(np.array([1.0]), np.array([1.0]), FocalParams())
        with pytest.raises(ValueError):
            focal_loss(np.array([0.5]), np.array([2.0]), FocalParams())
        with pytest.raises(ValueError):
            FocalParams(alpha=0.0)
        with pytest.raises(ValueError):
            FocalParams(gamma=-1.0)

    def test_monotone_decreasing_in_confidence_for_positives(self):
        params = FocalParams(alpha=0.5, gamma=2.0)
        values = [
            focal_loss(np.array([p]), np.array([1.0]), params).value
            for p in np.linspace(0.05, 0.95, 19)
        ]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(51)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            p = rng.uniform(0.05, 0.95, n)
            y = (rng.random(n) < 0.5).astype(float)
            params = FocalParams(
                alpha=float(rng.uniform(0.1, 0.9)),
                gamma=float(rng.choice([0.0, 0.5, 1.0, 2.0, 3.0])),
            )
            analytic = focal_loss(p, y, params).gradients["p"]
            numeric = numeric_gradient(lambda q: focal_loss(q, y, params).value, p.copy())
            assert gradient_relative_error(analytic, numeric) <= 1e-4


class TestHardnessScore:
    def test_equal_cosines_cancel(self):
        reference = StubReference({"q": [1.0, 0.0, 0.0, 0.0], "d": [1.0, 0.0, 0.0, 0.0]})
        score = hardness_score(
            np.array([2.0, 0.0]), np.array([5.0, 0.0]), "q", "d", reference
        )
        assert score == 0.0  # both cosines are exactly 1

    def test_hard_negative_scores_high(self):
        # current model similarity 0.9, reference similarity 0.1
        reference = StubReference(
            {"q": [1.0, 0.0, 0.0, 0.0], "d": list(unit_at_cosine(0.1)) + [0.0, 0.0]}
        )
        score = hardness_score(
            np.array([1.0, 0.0]), unit_at_cosine(0.9), "q", "d", reference
        )
        assert abs(score - 0.8) < 1e-12

    def test_invariant_to_positive_rescaling(self):
        reference = StubReference(
            {"q": [0.5, 0.5, 0.5, 0.5], "d": [0.9, 0.1, 0.0, 0.0]}
        )
        a = np.array([0.3, 0.7])
        b = np.array([-0.2, 0.9])
        base = hardness_score(a, b, "q", "d", reference)
        scaled = hardness_score(3.0 * a, 0.01 * b, "q", "d", reference)
        assert abs(base - scaled) < 1e-12


class TestSelectHardNegatives:
    def make_candidates(self, rng, n, with_descriptions=True):
        return tuple(
            NegativeCandidate(
                embedding=rng.standard_normal(6),
                provenance=NegativeProvenance.INTER_SAMPLE
                if rng.random() < 0.5
                else NegativeProvenance.INTRA_SAMPLE,
                description=f"d{i}" if with_descriptions else None,
            )
            for i in range(n)
        )

    def test_small_pool_takes_all(self, provider):
        rng = np.random.default_rng(60)
        example = ConceptExample(
            query_text="query",
            query_span=rng.standard_normal(6),
            positive_span=rng.standard_normal(6),
            negatives=self.make_candidates(rng, 3),
        )
        (selected,) = select_hard_negatives([example], k=50, reference=provider)
        assert sorted(selected.indices) == [0, 1, 2]
        assert list(selected.scores) == sorted(selected.scores, reverse=True)

    def test_matches_full_sort_oracle(self, provider):
        rng = np.random.default_rng(61)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            example = ConceptExample(
                query_text="the query",
                query_span=rng.standard_normal(6),
                positive_span=rng.standard_normal(6),
                negatives=self.make_candidates(rng, n),
            )
            for k in (1, 5, 50):
                (selected,) = select_hard_negatives([example], k=k, reference=provider)
                scores = [
                    hardness_score(
                        example.query_span,
                        cand.embedding,
                        example.query_text,
                        cand.description,
                        provider,
                    )
                    for cand in example.negatives
                ]
                expected = sorted(range(n), key=lambda i: (-scores[i], i))[:k]
                assert list(selected.indices) == expected

    def test_ties_keep_original_order(self, provider):
        vec = np.array([1.0, 0.0])
        candidates = tuple(
            NegativeCandidate(
                embedding=vec.copy(),
                provenance=NegativeProvenance.INTER_SAMPLE,
                description="same description",
            )
            for _ in range(5)
        )
        example = example_with(candidates)
        (selected,) = select_hard_negatives([example], k=3, reference=provider)
        assert list(selected.indices) == [0, 1, 2]

    def test_missing_description_excluded_with_diagnostic(self, provider):
        rng = np.random.default_rng(62)
        candidates = list(self.make_candidates(rng, 4))
        candidates[1] = NegativeCandidate(
            embedding=candidates[1].embedding,
            provenance=candidates[1].provenance,
            description=None,
        )
        example = example_with(tuple(candidates), query_span=rng.standard_normal(6),
                               positive=rng.standard_normal(6))
        (selected,) = select_hard_negatives([example], k=50, reference=provider)
        assert 1 not in selected.indices
        assert selected.skipped_no_description == 1
        assert len(selected.indices) == 3

    def test_output_is_subset_with_min_size(self, provider):
        rng = np.random.default_rng(63)
        for _ in range(30):
            n = int(rng.integers(1, 20))
            k = int(rng.integers(1, 8))
            example = ConceptExample(
                query_text="q",
                query_span=rng.standard_normal(6),
                positive_span=rng.standard_normal(6),
                negatives=self.make_candidates(rng, n),
            )
            (selected,) = select_hard_negatives([example], k=k, reference=provider)
            assert len(selected.indices) == min(k, n)
            assert set(selected.indices) <= set(range(n))


class TestAlignmentLoss:
    def test_equal_similarity_gives_log_k_plus_one(self):
        base = np.array([2.0, 0.0])
        for k in (1, 3, 10):
            negatives = tuple(
                NegativeCandidate(
                    embedding=base * float(i + 1),
                    provenance=NegativeProvenance.INTRA_SAMPLE,
                    description="d",
                )
                for i in range(k)
            )
            example = example_with(negatives, query_span=base, positive=base * 7.0)
            for tau in (0.05, 0.1, 1.0):
                report = alignment_loss([example], tau=tau)
                assert abs(report.value - math.log(k + 1)) < 1e-9
        # the k=3 constant, spelled out
        assert abs(math.log(4) - 1.3862944) < 1e-7

    def test_separated_pair_scalar_value(self):
        example = example_with(
            (
                NegativeCandidate(
                    embedding=np.array([-1.0, 0.0]),
                    provenance=NegativeProvenance.INTER_SAMPLE,
                    description="d",
                ),
            )
        )
        report = alignment_loss([example], tau=0.1)
        expected = -math.log(math.exp(10.0) / (math.exp(10.0) + math.exp(-10.0)))
        assert abs(report.value - expected) < 1e-12
        assert abs(report.value - 2.061e-9) < 1e-11

    def test_positive_and_decaying_with_gap(self):
        losses = []
        for gap_cos in (0.0, 0.5, 0.9):
            example = example_with(
                (
                    NegativeCandidate(
                        embedding=unit_at_cosine(1.0 - gap_cos) if gap_cos < 1.0 else np.array([0.0, 1.0]),
                        provenance=NegativeProvenance.INTER_SAMPLE,
                        description="d",
                    ),
                )
            )
            losses.append(alignment_loss([example], tau=0.1).value)
        assert all(v > 0.0 for v in losses)
        assert losses == sorted(losses, reverse=True)

    def test_finite_at_extreme_logits(self):
        example = example_with(
            (
                NegativeCandidate(
                    embedding=np.array([-1.0, 0.0]),
                    provenance=NegativeProvenance.INTER_SAMPLE,
                    description="d",
                ),
            )
        )
        report = alignment_loss([example], tau=1.0 / 700.0)  # logits at +-700
        assert np.isfinite(report.value)

    def test_zero_negative_concept_skipped_with_counter(self):
        with_negs = example_with(
            (
                NegativeCandidate(
                    embedding=np.array([0.0, 1.0]),
                    provenance=NegativeProvenance.INTER_SAMPLE,
                    description="d",
                ),
            )
        )
        without = example_with(())
        report = alignment_loss([with_negs, without], tau=0.1)
        assert report.counters["skipped_no_negatives"] == 1.0
        assert report.per_concept.shape == (1,)

    def test_tau_domain_error(self):
        with pytest.raises(ValueError):
            alignment_loss([example_with(())], tau=0.0)

    def test_gradients_match_finite_differences_all_inputs(self):
        rng = np.random.default_rng(70)
        for _ in range(100):
            dim = 5
            n_neg = int(rng.integers(1, 5))
            example = ConceptExample(
                query_text="q",
                query_span=rng.standard_normal(dim),
                positive_span=rng.standard_normal(dim),
                negatives=tuple(
                    NegativeCandidate(
                        embedding=rng.standard_normal(dim),
                        provenance=NegativeProvenance.INTER_SAMPLE,
                        description="d",
                    )
                    for _ in range(n_neg)
                ),
            )
            report = alignment_loss([example], tau=0.1)

            def rebuilt(q=None, pos=None, neg_idx=None, neg=None):
                negatives = list(example.negatives)
                if neg is not None:
                    negatives[neg_idx] = NegativeCandidate(
                        embedding=neg,
                        provenance=NegativeProvenance.INTER_SAMPLE,
                        description="d",
                    )
                shifted = ConceptExample(
                    query_text="q",
                    query_span=example.query_span if q is None else q,
                    positive_span=example.positive_span if pos is None else pos,
                    negatives=tuple(negatives),
                )
                return alignment_loss([shifted], tau=0.1).value

            numeric_q = numeric_gradient(lambda x: rebuilt(q=x), example.query_span.copy())
            assert gradient_relative_error(report.gradients["query_spans"][0], numeric_q) <= 1e-4
            numeric_pos = numeric_gradient(lambda x: rebuilt(pos=x), example.positive_span.copy())
            assert gradient_relative_error(report.gradients["positive_spans"][0], numeric_pos) <= 1e-4
            for j in range(n_neg):
                numeric_neg = numeric_gradient(
                    lambda x, j=j: rebuilt(neg_idx=j, neg=x),
                    example.negatives[j].embedding.copy(),
                )
                assert (
                    gradient_relative_error(report.gradients["negative_spans"][0][j], numeric_neg)
                    <= 1e-4
                )


class TestTotalLoss:
    def test_component_sum(self):
        total = total_loss(LossReport(value=1.0), LossReport(value=2.0), LossReport(value=3.0))
        assert total.value == 6.0

    def test_zero_component(self):
        total = total_loss(LossReport(value=0.0), LossReport(value=2.5), LossReport(value=1.5))
        assert total.value == 4.0

    def test_gradients_carried_per_component(self):
        rng = np.random.default_rng(80)
        p1, y1 = rng.uniform(0.1, 0.9, 4), np.array([1.0, 0.0, 1.0, 0.0])
        p2, y2 = rng.uniform(0.1, 0.9, 3), np.array([0.0, 1.0, 0.0])
        example = example_with(
            (
                NegativeCandidate(
                    embedding=np.array([0.0, 1.0]),
                    provenance=NegativeProvenance.INTER_SAMPLE,
                    description="d",
                ),
            )
        )
        code = focal_loss(p1, y1, FocalParams())
        query = focal_loss(p2, y2, FocalParams())
        align = alignment_loss([example], tau=0.1)
        total = total_loss(code, query, align)
        assert np.array_equal(total.gradients["code"]["p"], code.gradients["p"])
        assert np.array_equal(total.gradients["query"]["p"], query.gradients["p"])
        assert np.array_equal(
            total.gradients["align"]["query_spans"], align.gradients["query_spans"]
        )

    def test_non_finite_component_rejected(self):
        with pytest.raises(ValueError):
            total_loss(LossReport(value=float("nan")), LossReport(value=0.0), LossReport(value=0.0))


class TestToyComposite:
    def test_total_gradient_matches_finite_differences(self):
        # composite objective over a small free embedding table
        reference = TestEmbedProvider(dimension=16, seed=9)
        for seed in range(20):
            config = ToyConfig(
                n_concepts=3, dim=5, seed=seed, tokens_per_span=1, filler_per_side=2,
                concepts_per_pair=2, k_negatives=50,
            )
            dataset = build_toy_dataset(config, reference)
            base = dataset.embeddings
            batch_selection = None  # fixed selection: gradient of the smooth piece
            from conceptsearch.training import _toy_batch, select_hard_negatives as select

            batch_selection = select(_toy_batch(dataset, base), config.k_negatives, reference)
            _, analytic = toy_objective(dataset, base, selection=batch_selection)

            def value(x):
                return toy_objective(dataset, x, selection=batch_selection)[0].value

            numeric = numeric_gradient(value, base.copy(), h=1e-6)
            assert gradient_relative_error(analytic, numeric) <= 1e-4


@pytest.fixture(scope="module")
def reference():
    return TestEmbedProvider(dimension=16, seed=9)


@pytest.fixture(scope="module")
def fitted(reference):
    config = ToyConfig(n_concepts=16, dim=32, seed=1)
    dataset = build_toy_dataset(config, reference)
    result = toy_fit(dataset, steps=200, learning_rate=0.5, reference=reference)
    return config, dataset, result


class TestToyFit:
    def test_positive_exceeds_every_selected_negative(self, fitted, reference):
        _, dataset, result = fitted
        assert result.diverged_at is None
        for positive, hardest in positive_negative_margins(dataset, result.embeddings, reference):
            assert positive > hardest

    def test_bit_reproducible(self, fitted, reference):
        config, _, result = fitted
        dataset_again = build_toy_dataset(config, reference)
        rerun = toy_fit(dataset_again, steps=200, learning_rate=0.5, reference=reference)
        assert rerun.losses == result.losses
        assert np.array_equal(rerun.embeddings, result.embeddings)

    def test_loss_non_increasing_on_trajectory(self, fitted):
        _, _, result = fitted
        for a, b in zip(result.losses, result.losses[1:]):
            assert b <= a + 1e-9

    def test_nan_reported_with_step_index(self, reference):
        config = ToyConfig(n_concepts=4, dim=8, seed=2)
        dataset = build_toy_dataset(config, reference)
        dataset.embeddings[0, 0] = np.nan
        result = toy_fit(dataset, steps=10, learning_rate=0.1, reference=reference)
        assert result.diverged_at == 0
