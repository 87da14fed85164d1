"""Shared fixtures: deterministic providers, heads, and synthetic corpora."""

from __future__ import annotations

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from conceptsearch.embedding import TestEmbedProvider
from conceptsearch.query_analysis import ProbeHead


@pytest.fixture(scope="session")
def provider() -> TestEmbedProvider:
    return TestEmbedProvider(dimension=64, seed=0)


@pytest.fixture(scope="session")
def small_provider() -> TestEmbedProvider:
    return TestEmbedProvider(dimension=16, seed=3)


@pytest.fixture(scope="session")
def zero_heads(provider) -> tuple[ProbeHead, ProbeHead]:
    """Heads scoring every token 0.5: everything passes the 0.4 threshold."""
    return (
        ProbeHead.zeros(provider.dimension, "query"),
        ProbeHead.zeros(provider.dimension, "code"),
    )


def make_planted_corpus(
    n_snippets: int,
    n_queries: int,
    words_per_query: int = 3,
    relevant_per_query: int = 1,
    filler_vocab: int = 150,
    seed: int = 0,
):
    """A corpus where each query's targets uniquely contain all its words.

    Each query gets its own disjoint triple of concept words; each of its
    ``relevant_per_query`` target snippets carries all of them (one per line,
    plus filler lines).  Distractors borrow at most ``words_per_query - 1``
    words from any one query, so only targets cover every concept.

    Returns (corpus, queries) where corpus is a list of (id, source,
    language) and queries is a list of (query_text, [relevant ids]).
    """
    rng = np.random.default_rng(seed)
    filler = [f"filler{i:03d}" for i in range(filler_vocab)]

    corpus: list[tuple[str, str, str]] = []
    queries: list[tuple[str, list[str]]] = []
    next_id = 0

    for q in range(n_queries):
        words = [f"concept{q:03d}x{j}" for j in range(words_per_query)]
        queries.append((" ".join(words), []))
        for _ in range(relevant_per_query):
            lines = [f"{w} {rng.choice(filler)}" for w in words]
            lines.append(" ".join(rng.choice(filler, size=3)))
            rng.shuffle(lines)
            candidate_id = f"c{next_id:05d}"
            next_id += 1
            corpus.append((candidate_id, "\n".join(lines), "other"))
            queries[-1][1].append(candidate_id)

    while len(corpus) < n_snippets:
        lines = [" ".join(rng.choice(filler, size=2)) for _ in range(3)]
        if next_id % 3 == 0:
            # borrow a strict subset of some query's words
            q = int(rng.integers(0, n_queries))
            borrow = int(rng.integers(1, words_per_query))
            for j in range(borrow):
                lines.append(f"concept{q:03d}x{j} {rng.choice(filler)}")
        candidate_id = f"c{next_id:05d}"
        next_id += 1
        corpus.append((candidate_id, "\n".join(lines), "other"))

    return corpus, queries
