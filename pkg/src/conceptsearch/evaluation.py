"""Retrieval and explanation metrics, plus a benchmark runner over an index.

Retrieval metrics use 1-based ranks.  MRR averages the reciprocal rank of the
first relevant result per query; MMRR averages the best reciprocal rank among
all relevant results, so the two coincide on singleton relevant sets and
MMRR >= MRR always.  A relevant item absent from a ranking contributes
reciprocal 0 (the rank-to-infinity convention); full-corpus rankings never
hit this, it only guards harness misuse.

Explanation metrics are macro-averaged set precision/recall: highlight P/R
compares predicted concept-bearing tokens to gold per pair and kind, and
alignment P/R compares code lines whose similarity strictly exceeds
``delta_align`` to the gold aligned lines per concept, with Recall@k over the
top-k most similar lines.

Benchmark files are newline-delimited ``{"query": str, "relevant_ids":
[str, ...]}``; multi-element lists exercise MMRR, singletons MRR.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_DELTA_ALIGN = 0.5
DEFAULT_RECALL_KS = (1, 3, 5)


@dataclass(frozen=True)
class RankedList:
    query_id: str
    ranking: tuple[str, ...]
    relevant: frozenset[str]

    def __post_init__(self) -> None:
        if not self.relevant:
            raise ValueError(f"query {self.query_id!r}: relevant set is empty")
        if len(set(self.ranking)) != len(self.ranking):
            raise ValueError(f"query {self.query_id!r}: ranking contains duplicates")


def _first_relevant_reciprocal(ranked: RankedList) -> float:
    for position, candidate in enumerate(ranked.ranking, start=1):
        if candidate in ranked.relevant:
            return 1.0 / position
    return 0.0


def _best_relevant_reciprocal(ranked: RankedList) -> float:
    best = 0.0
    for position, candidate in enumerate(ranked.ranking, start=1):
        if candidate in ranked.relevant:
            best = max(best, 1.0 / position)
    return best


def mrr(lists: Sequence[RankedList]) -> float:
    """Mean reciprocal rank of the first relevant result."""
    if not lists:
        raise ValueError("no ranked lists")
    return sum(_first_relevant_reciprocal(r) for r in lists) / len(lists)


def mmrr(lists: Sequence[RankedList]) -> float:
    """Mean of the best reciprocal rank among all relevant results."""
    if not lists:
        raise ValueError("no ranked lists")
    return sum(_best_relevant_reciprocal(r) for r in lists) / len(lists)


# --- explanation metrics ---------------------------------------------------------


@dataclass(frozen=True)
class HighlightJudgment:
    """Predicted vs gold concept-bearing token indices for one text."""

    kind: str  # "query" | "code"
    predicted: frozenset[int]
    gold: frozenset[int]


@dataclass(frozen=True)
class AlignmentJudgment:
    """Per-concept line similarities vs gold aligned lines."""

    concept_id: str
    line_similarities: tuple[tuple[int, float], ...]  # (line index, similarity)
    gold_lines: frozenset[int]


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    pairs: int
    skipped_empty_gold: int


def _set_precision_recall(predicted: frozenset[int], gold: frozenset[int]) -> tuple[float, float]:
    hits = len(predicted & gold)
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(gold)
    return precision, recall


def highlight_pr(judgments: Iterable[HighlightJudgment]) -> dict[str, PrecisionRecall]:
    """Macro-averaged highlight precision/recall per kind (query/code).

    Pairs with empty gold are skipped and counted rather than averaged; an
    empty prediction against non-empty gold scores (0, 0).
    """
    sums: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    skipped: dict[str, int] = {}
    for judgment in judgments:
        kind = judgment.kind
        sums.setdefault(kind, [0.0, 0.0])
        counts.setdefault(kind, 0)
        skipped.setdefault(kind, 0)
        if not judgment.gold:
            skipped[kind] += 1
            continue
        precision, recall = _set_precision_recall(judgment.predicted, judgment.gold)
        sums[kind][0] += precision
        sums[kind][1] += recall
        counts[kind] += 1
    return {
        kind: PrecisionRecall(
            precision=sums[kind][0] / counts[kind] if counts[kind] else 0.0,
            recall=sums[kind][1] / counts[kind] if counts[kind] else 0.0,
            pairs=counts[kind],
            skipped_empty_gold=skipped[kind],
        )
        for kind in sums
    }


@dataclass(frozen=True)
class AlignmentReport:
    precision: float
    recall: float
    recall_at: dict[int, float]
    concepts: int
    skipped_empty_gold: int


def alignment_pr(
    judgments: Sequence[AlignmentJudgment],
    delta_align: float = DEFAULT_DELTA_ALIGN,
    ks: Sequence[int] = DEFAULT_RECALL_KS,
) -> AlignmentReport:
    """Alignment precision/recall at ``delta_align`` plus Recall@k.

    Predicted lines are those with similarity strictly above the threshold.
    Recall@k counts a concept as hit when its top-k most similar lines (ties
    by lowest line index) intersect the gold lines.
    """
    p_sum = r_sum = 0.0
    hits_at = {k: 0 for k in ks}
    used = 0
    skipped = 0
    for judgment in judgments:
        if not judgment.gold_lines:
            skipped += 1
            continue
        used += 1
        predicted = frozenset(
            line for line, sim in judgment.line_similarities if sim > delta_align
        )
        precision, recall = _set_precision_recall(predicted, judgment.gold_lines)
        p_sum += precision
        r_sum += recall
        by_similarity = sorted(judgment.line_similarities, key=lambda t: (-t[1], t[0]))
        for k in ks:
            top = {line for line, _ in by_similarity[:k]}
            if top & judgment.gold_lines:
                hits_at[k] += 1
    return AlignmentReport(
        precision=p_sum / used if used else 0.0,
        recall=r_sum / used if used else 0.0,
        recall_at={k: hits_at[k] / used if used else 0.0 for k in ks},
        concepts=used,
        skipped_empty_gold=skipped,
    )


# --- benchmark runner -------------------------------------------------------------


def load_benchmark(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fp:
        for line in fp:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def run_benchmark(index, benchmark_path: str | Path, metrics: Sequence[str] = ("mrr", "mmrr")) -> dict:
    """Search the index for every benchmark query and report the metrics.

    Queries whose relevant ids cannot all be resolved in the index are
    skipped and counted.  Rankings cover the full index so the absent-item
    convention never applies.
    """
    known = set(index.entry_ids())
    lists: list[RankedList] = []
    per_query: list[dict] = []
    skipped = 0
    for i, record in enumerate(load_benchmark(benchmark_path)):
        relevant = set(record["relevant_ids"])
        if not relevant or not relevant <= known:
            skipped += 1
            continue
        outcome = index.search(record["query"], top_k=len(known))
        ranking = tuple(result.candidate_id for result in outcome.results)
        ranked = RankedList(query_id=str(i), ranking=ranking, relevant=frozenset(relevant))
        lists.append(ranked)
        per_query.append(
            {
                "query": record["query"],
                "first_reciprocal": _first_relevant_reciprocal(ranked),
                "best_reciprocal": _best_relevant_reciprocal(ranked),
            }
        )

    report: dict = {"queries": len(lists), "skipped": skipped, "per_query": per_query}
    if lists:
        if "mrr" in metrics:
            report["mrr"] = mrr(lists)
        if "mmrr" in metrics:
            report["mmrr"] = mmrr(lists)
    return report
