"""End-to-end acceptance suite.

One test per criterion; each prints a PASS/FAIL line (also echoed in the
terminal summary) and enforces its runtime budget.  Every expected value is
either computed by an independent oracle in this module / ``oracles.py`` or
is a closed-form constant derived by hand.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import conftest
from conceptsearch.embedding import EmbedRequest, TestEmbedProvider, cosine
from conceptsearch.evaluation import RankedList, mmrr, mrr
from conceptsearch.index import Index
from conceptsearch.matching import DotProductCounter, match, rank
from conceptsearch.query_analysis import ProbeHead, QueryConcept, cluster_concepts
from conceptsearch.training import (
    ConceptExample,
    FocalParams,
    LossReport,
    NegativeCandidate,
    NegativeProvenance,
    ToyConfig,
    _toy_batch,
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
from conftest import make_planted_corpus
from oracles import agglomerate_oracle, grouped_vectors, rank_oracle, select_oracle, synthetic_response


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        line = f"[FAIL] {name}"
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget_s
    line = f"[{'PASS' if ok else 'FAIL'}] {name}  ({elapsed:.2f}s, budget {budget_s:.0f}s)"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, f"{name}: runtime {elapsed:.2f}s exceeded budget {budget_s}s"


def test_criterion_01_equation_oracles():
    with criterion("equation oracles (focal/alignment/total)", 10.0):
        # focal with gamma=0, alpha=0.5 equals half the BCE sum, 1e-12 tight
        rng = np.random.default_rng(1001)
        params = FocalParams(alpha=0.5, gamma=0.0)
        for _ in range(1000):
            n = int(rng.integers(1, 16))
            p = rng.uniform(1e-6, 1.0 - 1e-6, n)
            y = (rng.random(n) < 0.3).astype(float)
            bce = float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum())
            assert abs(focal_loss(p, y, params).value - 0.5 * bce) <= 1e-12 * max(1.0, abs(bce))

        # alignment under equal similarities: ln(K+1) per concept
        base = np.array([1.0, 2.0, -0.5])
        for k in (1, 3, 10):
            negatives = tuple(
                NegativeCandidate(
                    embedding=base * float(2 + i),
                    provenance=NegativeProvenance.INTRA_SAMPLE,
                    description="d",
                )
                for i in range(k)
            )
            examples = [
                ConceptExample(
                    query_text="q",
                    query_span=base * scale,
                    positive_span=base * 9.0,
                    negatives=negatives,
                )
                for scale in (1.0, 0.5)
            ]
            for tau in (0.05, 0.1, 1.0):
                report = alignment_loss(examples, tau=tau)
                assert abs(report.value - 2.0 * math.log(k + 1)) < 1e-9
                assert abs(report.mean_per_concept - math.log(k + 1)) < 1e-9

        # total is exactly the component sum
        rng = np.random.default_rng(1002)
        for _ in range(100):
            a, b, c = rng.uniform(0.0, 5.0, 3)
            total = total_loss(LossReport(value=a), LossReport(value=b), LossReport(value=c))
            assert total.value == a + b + c


def test_criterion_02_gradient_checks():
    with criterion("gradient checks vs central finite differences", 30.0):
        tolerance = 1e-4

        # focal loss, 100 seeded cases
        rng = np.random.default_rng(2001)
        for _ in range(100):
            n = int(rng.integers(1, 10))
            p = rng.uniform(0.05, 0.95, n)
            y = (rng.random(n) < 0.5).astype(float)
            params = FocalParams(
                alpha=float(rng.uniform(0.1, 0.9)),
                gamma=float(rng.choice([0.0, 0.5, 1.0, 2.0])),
            )
            analytic = focal_loss(p, y, params).gradients["p"]
            numeric = numeric_gradient(lambda q: focal_loss(q, y, params).value, p.copy())
            assert gradient_relative_error(analytic, numeric) <= tolerance

        # alignment loss over query/positive/negative inputs, 100 seeded cases
        rng = np.random.default_rng(2002)
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

            def with_parts(q=None, pos=None, neg_idx=None, neg=None):
                negatives = list(example.negatives)
                if neg is not None:
                    negatives[neg_idx] = NegativeCandidate(
                        embedding=neg,
                        provenance=NegativeProvenance.INTER_SAMPLE,
                        description="d",
                    )
                return alignment_loss(
                    [
                        ConceptExample(
                            query_text="q",
                            query_span=example.query_span if q is None else q,
                            positive_span=example.positive_span if pos is None else pos,
                            negatives=tuple(negatives),
                        )
                    ],
                    tau=0.1,
                ).value

            checks = [
                (report.gradients["query_spans"][0],
                 numeric_gradient(lambda x: with_parts(q=x), example.query_span.copy())),
                (report.gradients["positive_spans"][0],
                 numeric_gradient(lambda x: with_parts(pos=x), example.positive_span.copy())),
                (report.gradients["negative_spans"][0][0],
                 numeric_gradient(lambda x: with_parts(neg_idx=0, neg=x),
                                  example.negatives[0].embedding.copy())),
            ]
            for analytic, numeric in checks:
                assert gradient_relative_error(analytic, numeric) <= tolerance

        # total objective over a free embedding table, 100 seeded cases
        reference = TestEmbedProvider(dimension=16, seed=9)
        for seed in range(100):
            config = ToyConfig(
                n_concepts=3, dim=4, seed=seed, tokens_per_span=1,
                filler_per_side=2, concepts_per_pair=2,
            )
            dataset = build_toy_dataset(config, reference)
            selection = select_hard_negatives(
                _toy_batch(dataset, dataset.embeddings), config.k_negatives, reference
            )
            _, analytic = toy_objective(dataset, dataset.embeddings, selection=selection)
            numeric = numeric_gradient(
                lambda x: toy_objective(dataset, x, selection=selection)[0].value,
                dataset.embeddings.copy(),
                h=1e-6,
            )
            assert gradient_relative_error(analytic, numeric) <= tolerance


def test_criterion_03_hard_negative_selection_oracle():
    with criterion("hard-negative selection vs full-sort oracle", 10.0):
        provider = TestEmbedProvider(dimension=32, seed=42)
        rng = np.random.default_rng(3001)
        for case in range(500):
            pool = int(rng.integers(1, 65))
            example = ConceptExample(
                query_text=f"query {case % 25}",
                query_span=rng.standard_normal(8),
                positive_span=rng.standard_normal(8),
                negatives=tuple(
                    NegativeCandidate(
                        embedding=rng.standard_normal(8),
                        provenance=NegativeProvenance.INTER_SAMPLE,
                        description=f"description {int(rng.integers(0, 40))}",
                    )
                    for _ in range(pool)
                ),
            )
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
            for k in (1, 5, 50):
                (selected,) = select_hard_negatives([example], k=k, reference=provider)
                assert list(selected.indices) == select_oracle(scores, k), (case, k)
                assert list(selected.scores) == [scores[i] for i in selected.indices]


def test_criterion_04_clustering_oracle():
    with criterion("agglomerative clustering vs exhaustive oracle", 20.0):
        rng = np.random.default_rng(4001)
        for case in range(200):
            n = int(rng.integers(2, 9))
            matrix = grouped_vectors(rng, n)
            response = synthetic_response(matrix)
            scores = np.full(n, 0.9)
            for delta in (0.5, 0.8, 0.95):
                got = sorted(
                    c.token_indices for c in cluster_concepts(response, scores, 0.4, delta)
                )
                assert got == agglomerate_oracle(matrix, list(range(n)), delta), (case, delta)

        rng = np.random.default_rng(4002)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            matrix = grouped_vectors(rng, n)
            response = synthetic_response(matrix)
            scores = np.full(n, 0.9)
            counts = [
                len(cluster_concepts(response, scores, 0.4, delta))
                for delta in (0.4, 0.55, 0.7, 0.85, 0.97)
            ]
            assert counts == sorted(counts)


def test_criterion_05_matching_oracle():
    from conceptsearch.code_analysis import LineEmbedding

    with criterion("greedy matching vs exhaustive rescoring oracle", 10.0):
        rng = np.random.default_rng(5001)
        for case in range(500):
            dim = 6
            concepts = [
                QueryConcept(token_indices=(0,), centroid=rng.standard_normal(dim))
                for _ in range(int(rng.integers(1, 5)))
            ]
            candidates = []
            for c in range(int(rng.integers(2, 6))):
                lines = [
                    LineEmbedding(
                        line_index=j,
                        vector=rng.standard_normal(dim),
                        concept_bearing=bool(rng.random() < 0.7),
                        max_highlight=0.5,
                    )
                    for j in range(int(rng.integers(1, 11)))
                ]
                candidates.append((f"cand{c}", lines))
            got = rank(concepts, candidates)
            expected = rank_oracle(concepts, candidates)
            assert [r.candidate_id for r in got] == [cid for cid, _, _ in expected], case
            for result, (_, score, degenerate) in zip(got, expected):
                assert abs(result.score - score) < 1e-12
                assert result.degenerate == degenerate
                assert -1.0 <= result.score <= 1.0

        # tie-break determinism: equal scores order by ascending id, stably
        shared = [
            LineEmbedding(line_index=0, vector=np.array([1.0, 0.0]),
                          concept_bearing=True, max_highlight=0.9)
        ]
        concepts = [QueryConcept(token_indices=(0,), centroid=np.array([1.0, 0.0]))]
        for ordering in (("b", "a", "c"), ("c", "b", "a")):
            results = rank(concepts, [(cid, shared) for cid in ordering])
            assert [r.candidate_id for r in results] == ["a", "b", "c"]


def test_criterion_06_synthetic_end_to_end_retrieval(tmp_path):
    with criterion("synthetic end-to-end retrieval (MRR/MMRR = 1.0)", 60.0):
        provider = TestEmbedProvider(dimension=64, seed=0)

        # single-relevant: 500 snippets, 100 queries, unique concept coverage
        corpus, queries = make_planted_corpus(
            n_snippets=500, n_queries=100, relevant_per_query=1, seed=60
        )
        index = Index.create(tmp_path / "single", provider)
        stats = index.ingest(corpus)
        assert len(stats.added) == 500 and not stats.skipped
        lists = []
        for qid, (query, relevant) in enumerate(queries):
            outcome = index.search(query, top_k=500, delta_highlight=0.4, delta_cluster=0.8)
            lists.append(
                RankedList(
                    query_id=str(qid),
                    ranking=tuple(r.candidate_id for r in outcome.results),
                    relevant=frozenset(relevant),
                )
            )
        assert mrr(lists) == 1.0

        # multi-relevant variant: 3 targets per query
        corpus3, queries3 = make_planted_corpus(
            n_snippets=500, n_queries=100, relevant_per_query=3, seed=61
        )
        index3 = Index.create(tmp_path / "multi", provider)
        index3.ingest(corpus3)
        multi_lists = []
        for qid, (query, relevant) in enumerate(queries3):
            outcome = index3.search(query, top_k=500)
            multi_lists.append(
                RankedList(
                    query_id=str(qid),
                    ranking=tuple(r.candidate_id for r in outcome.results),
                    relevant=frozenset(relevant),
                )
            )
        assert mmrr(multi_lists) == 1.0

        # perturbing rankings never breaks MMRR >= MRR
        rng = np.random.default_rng(62)
        perturbed = []
        for ranked in multi_lists:
            ranking = list(ranked.ranking)
            for _ in range(40):
                i, j = rng.integers(0, len(ranking), 2)
                ranking[i], ranking[j] = ranking[j], ranking[i]
            perturbed.append(
                RankedList(query_id=ranked.query_id, ranking=tuple(ranking), relevant=ranked.relevant)
            )
        assert mmrr(perturbed) >= mrr(perturbed)


def test_criterion_07_complexity_contract(tmp_path):
    with criterion("complexity contract (dot-product count + scaling)", 120.0):
        provider = TestEmbedProvider(dimension=64, seed=0)

        # exact closed-form dot-product count on 10 seeded corpora
        for seed in range(10):
            corpus, queries = make_planted_corpus(
                n_snippets=30, n_queries=6, seed=700 + seed
            )
            index = Index.create(tmp_path / f"count{seed}", provider)
            index.ingest(corpus)
            query = queries[seed % len(queries)][0]
            counter = DotProductCounter()
            outcome = index.search(query, top_k=30, counter=counter)
            k = len(outcome.concepts)
            retained_total = 0
            for candidate_id in index.entry_ids():
                entry = index.entry(candidate_id)
                retained_total += int((entry.line_max_highlight > 0.4).sum())
            assert counter.count == k * retained_total
            assert outcome.stats.dot_products == counter.count
            assert outcome.stats.retained_lines_total == retained_total

        # wall-clock scaling within 2x of linear across corpus doublings
        sizes = (1000, 2000, 4000)
        search_times: dict[int, float] = {}
        ingest_times: dict[int, float] = {}
        query = "concept000x0 concept000x1 concept000x2"
        for size in sizes:
            corpus, _ = make_planted_corpus(
                n_snippets=size, n_queries=100, seed=71
            )
            index = Index.create(tmp_path / f"scale{size}", provider)
            start = time.perf_counter()
            index.ingest(corpus)
            ingest_times[size] = time.perf_counter() - start
            index.search(query, top_k=10)  # warm-up
            runs = []
            for _ in range(5):
                start = time.perf_counter()
                index.search(query, top_k=10)
                runs.append(time.perf_counter() - start)
            search_times[size] = min(runs)
        for small, big in zip(sizes, sizes[1:]):
            assert search_times[big] / search_times[small] <= 4.0, search_times
            assert ingest_times[big] / ingest_times[small] <= 4.0, ingest_times


def test_criterion_08_validator_suite():
    from conceptsearch.annotation import (
        ValidationStatus,
        cohen_kappa,
        run_budgeted,
        validate,
    )

    with criterion("annotation validators, retry ledger, Cohen's kappa", 5.0):
        good = {
            "query": "merge two dictionaries into one",
            "code": "def merge(a, b):\n    a.update(b)\n    return a",
            "language": "python",
            "concepts": [
                {"id": "c0", "spans": ["merge"], "token_indices": [0]},
                {"id": "c1", "spans": ["two dictionaries"], "token_indices": [1, 2]},
            ],
            "alignments": [
                {"concept_id": "c0", "units": [{"line_start": 1, "line_end": 1, "description": "update"}]},
            ],
        }

        def variant(**changes):
            record = json.loads(json.dumps(good))
            for path, value in changes.items():
                cursor = record
                *steps, last = path.split(".")
                for step in steps:
                    cursor = cursor[int(step)] if step.isdigit() else cursor[step]
                if value is None:
                    del cursor[last]
                else:
                    cursor[last] = value
            return json.dumps(record)

        expectations = [
            (variant(), ValidationStatus.PASS, None),
            ("{truncated", ValidationStatus.FORMAT_FAIL, "parseable"),
            (variant(alignments=None), ValidationStatus.FORMAT_FAIL, "required_fields"),
            (variant(query=5), ValidationStatus.FORMAT_FAIL, "field_types"),
            (variant(language="brainfuck"), ValidationStatus.FORMAT_FAIL, "language_enum"),
            (
                variant(**{"concepts.1.spans": ["two dictionarys"]}),
                ValidationStatus.CONSISTENCY_FAIL,
                "span_verbatim",
            ),
            (
                variant(**{"concepts.0.token_indices": [99]}),
                ValidationStatus.CONSISTENCY_FAIL,
                "token_indices_valid",
            ),
            (
                variant(**{"concepts.1.token_indices": [0, 2]}),
                ValidationStatus.CONSISTENCY_FAIL,
                "concept_overlap",
            ),
            (
                variant(**{"alignments.0.concept_id": "ghost"}),
                ValidationStatus.CONSISTENCY_FAIL,
                "alignment_concept_known",
            ),
            (
                variant(**{"alignments.0.units.0.line_end": 40}),
                ValidationStatus.CONSISTENCY_FAIL,
                "unit_range",
            ),
            (
                variant(**{"alignments.0.units.0.text": "a .update(b)"}),
                ValidationStatus.CONSISTENCY_FAIL,
                "unit_text_verbatim",
            ),
        ]
        for raw, status, assertion in expectations:
            outcome = validate(raw)
            assert outcome.status is status, (raw, outcome)
            if assertion is not None:
                assert any(name == assertion for name, _ in outcome.violations), outcome

        # retry ledger with budget 5 reproduces a constructed histogram
        streams = {}
        for i in range(73):
            streams[f"p{i:03d}"] = [json.dumps(good)]
        for i in range(20):
            streams[f"q{i:03d}"] = ["{bad", json.dumps(good)]
        for i in range(4):
            streams[f"r{i:03d}"] = ["{bad", "{bad", json.dumps(good)]
        for i in range(3):
            streams[f"x{i:03d}"] = ["{bad"] * 10
        run = run_budgeted(streams, budget=5)
        assert run.ledger.retry_histogram() == {0: 73, 1: 20, 2: 4}
        assert len(run.ledger.discarded) == 3
        assert all(n <= 6 for n in run.ledger.attempts.values())
        assert len(run.accepted) + len(run.ledger.discarded) == 100

        # kappa: five fixed tables vs hand-derived values
        tables = [
            ([1, 0, 1, 0, 1], [1, 0, 1, 0, 1], 1.0),
            ([1, 1, 0, 0], [1, 0, 1, 0], 0.0),
            ([1, 1, 1, 0], [1, 1, 0, 0], 0.5),
            ([1, 1, 0, 0, 1], [1, 1, 0, 0, 0], (0.8 - 0.48) / (1 - 0.48)),
            ([1, 0, 1, 0], [0, 1, 0, 1], -1.0),
        ]
        for a, b, expected in tables:
            assert abs(cohen_kappa(a, b).value - expected) <= 1e-12


def test_criterion_09_toy_fit():
    with criterion("toy gradient-descent fit (separation + reproducibility)", 10.0):
        reference = TestEmbedProvider(dimension=16, seed=9)
        config = ToyConfig(n_concepts=16, dim=32, seed=1)

        first = toy_fit(build_toy_dataset(config, reference), steps=200,
                        learning_rate=0.5, reference=reference)
        second = toy_fit(build_toy_dataset(config, reference), steps=200,
                         learning_rate=0.5, reference=reference)
        assert first.diverged_at is None
        assert first.losses == second.losses
        assert np.array_equal(first.embeddings, second.embeddings)

        margins = positive_negative_margins(
            build_toy_dataset(config, reference), first.embeddings, reference
        )
        assert len(margins) == 16
        for positive, hardest in margins:
            assert positive > hardest


def test_criterion_10_index_round_trip(tmp_path):
    with criterion("index round trip (ingest/reopen bit-identical)", 30.0):
        provider = TestEmbedProvider(dimension=64, seed=0)
        rng = np.random.default_rng(10001)
        words = [f"token{i:03d}" for i in range(60)]
        for case in range(20):
            corpus = []
            for e in range(8):
                lines = [
                    " ".join(rng.choice(words, size=int(rng.integers(1, 5))))
                    for _ in range(int(rng.integers(1, 6)))
                ]
                corpus.append((f"e{e}", "\n".join(lines), "other"))
            path = tmp_path / f"rt{case}"
            live = Index.create(path, provider)
            live.ingest(corpus)
            query = " ".join(rng.choice(words, size=3))
            fresh = live.search(query, top_k=8)
            reopened = Index.open(path, provider)
            again = reopened.search(query, top_k=8)
            assert [r.candidate_id for r in fresh.results] == [
                r.candidate_id for r in again.results
            ]
            for a, b in zip(fresh.results, again.results):
                assert a.score == b.score
                assert a.degenerate == b.degenerate
                assert [(m.concept, m.line_index, m.similarity) for m in a.matches] == [
                    (m.concept, m.line_index, m.similarity) for m in b.matches
                ]
