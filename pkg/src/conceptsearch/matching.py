"""Greedy concept-to-line matching and candidate ranking.

Each query concept is matched independently to the concept-bearing code line
with the highest cosine similarity (lines may be reused across concepts; the
per-concept max is taken as written, with no bipartite constraint).  A
candidate's score is the mean of its per-concept maxima, so code must address
every concept to score highly.  Candidates without any concept-bearing line
are kept in the ranking with the sentinel worst score -1 and flagged
degenerate rather than dropped.

Ties are deterministic: within a candidate, the lowest line index wins; across
candidates, equal scores order by ascending candidate id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from conceptsearch.code_analysis import LineEmbedding
from conceptsearch.embedding import cosine
from conceptsearch.query_analysis import QueryConcept

DEGENERATE_SCORE = -1.0


@dataclass
class DotProductCounter:
    """Counts concept-line similarity evaluations for complexity checks."""

    count: int = 0


@dataclass(frozen=True)
class ConceptMatch:
    concept: int
    line_index: int
    similarity: float


@dataclass(frozen=True)
class ExplainedResult:
    candidate_id: str
    score: float
    matches: tuple[ConceptMatch, ...]
    degenerate: bool = False


def match(
    concepts: Sequence[QueryConcept],
    lines: Sequence[LineEmbedding],
    candidate_id: str = "",
    counter: DotProductCounter | None = None,
) -> ExplainedResult:
    """Score one candidate against the query concepts.

    Only concept-bearing lines are matchable.  With none, the result is
    degenerate: score -1, no matches.
    """
    if not concepts:
        raise ValueError("concept list is empty")
    bearing = sorted(
        (line for line in lines if line.concept_bearing), key=lambda l: l.line_index
    )
    if not bearing:
        return ExplainedResult(
            candidate_id=candidate_id,
            score=DEGENERATE_SCORE,
            matches=(),
            degenerate=True,
        )

    matches: list[ConceptMatch] = []
    total = 0.0
    for k, concept in enumerate(concepts):
        best_sim = -2.0
        best_line = -1
        for line in bearing:
            sim = cosine(concept.centroid, line.vector)
            if counter is not None:
                counter.count += 1
            if sim > best_sim:  # strict: first (lowest) line index wins ties
                best_sim = sim
                best_line = line.line_index
        matches.append(ConceptMatch(concept=k, line_index=best_line, similarity=best_sim))
        total += best_sim
    return ExplainedResult(
        candidate_id=candidate_id,
        score=total / len(concepts),
        matches=tuple(matches),
        degenerate=False,
    )


def rank(
    concepts: Sequence[QueryConcept],
    candidates: Iterable[tuple[str, Sequence[LineEmbedding]]],
    counter: DotProductCounter | None = None,
) -> list[ExplainedResult]:
    """Score every candidate and order by descending score, then ascending id."""
    results = [
        match(concepts, lines, candidate_id=cid, counter=counter)
        for cid, lines in candidates
    ]
    results.sort(key=lambda r: (-r.score, r.candidate_id))
    return results
