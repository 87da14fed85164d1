"""Assertion-based validation of annotation records and retry bookkeeping.

Two assertion classes gate each record:

* format assertions — the raw text parses as JSON and carries exactly the
  required fields with the right types;
* consistency assertions — every concept span string appears verbatim in the
  query (case- and whitespace-sensitive substring; normalizing would weaken
  the check), every aligned line range lies within the code, optional unit
  ``text`` appears verbatim in the code, token indices are valid against the
  package tokenizer, and concept spans are pairwise disjoint.

All failures are outcomes, never exceptions: the annotator generating the
records lives behind an external attempt-stream interface, and a record is
accepted on its first passing attempt or discarded after ``budget`` failed
retries (``budget + 1`` total attempts).

Inter-annotator agreement uses two-rater binary Cohen's kappa.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

from conceptsearch.model import Language
from conceptsearch.tokenizer import line_count, tokenize

DEFAULT_RETRY_BUDGET = 5

_REQUIRED_FIELDS = ("query", "code", "language", "concepts", "alignments")
_LANGUAGES = {language.value for language in Language}


class ValidationStatus(str, Enum):
    PASS = "pass"
    FORMAT_FAIL = "format_fail"
    CONSISTENCY_FAIL = "consistency_fail"


@dataclass(frozen=True)
class ValidationOutcome:
    record_id: str
    status: ValidationStatus
    violations: tuple[tuple[str, str], ...] = ()  # (assertion name, detail)
    attempt_index: int = 0

    def __post_init__(self) -> None:
        if (self.status is ValidationStatus.PASS) != (not self.violations):
            raise ValueError("status pass iff violations empty")


def _format_violations(record: object) -> list[tuple[str, str]]:
    violations: list[tuple[str, str]] = []
    if not isinstance(record, dict):
        return [("parseable", "top-level value is not an object")]
    for name in _REQUIRED_FIELDS:
        if name not in record:
            violations.append(("required_fields", f"missing field {name!r}"))
    if violations:
        return violations

    if not isinstance(record["query"], str):
        violations.append(("field_types", "query must be a string"))
    if not isinstance(record["code"], str):
        violations.append(("field_types", "code must be a string"))
    if not isinstance(record["language"], str):
        violations.append(("field_types", "language must be a string"))
    elif record["language"] not in _LANGUAGES:
        violations.append(
            ("language_enum", f"unknown language {record['language']!r}")
        )

    concepts = record["concepts"]
    if not isinstance(concepts, list):
        violations.append(("field_types", "concepts must be an array"))
    else:
        for i, concept in enumerate(concepts):
            if not isinstance(concept, dict):
                violations.append(("field_types", f"concepts[{i}] must be an object"))
                continue
            if "id" not in concept or not isinstance(concept["id"], (str, int)):
                violations.append(("field_types", f"concepts[{i}].id missing or bad"))
            spans = concept.get("spans")
            if not isinstance(spans, list) or not all(isinstance(s, str) for s in spans):
                violations.append(
                    ("field_types", f"concepts[{i}].spans must be an array of strings")
                )
            indices = concept.get("token_indices")
            if not isinstance(indices, list) or not all(
                isinstance(t, int) and not isinstance(t, bool) for t in indices
            ):
                violations.append(
                    ("field_types", f"concepts[{i}].token_indices must be an array of ints")
                )

    alignments = record["alignments"]
    if not isinstance(alignments, list):
        violations.append(("field_types", "alignments must be an array"))
    else:
        for i, alignment in enumerate(alignments):
            if not isinstance(alignment, dict):
                violations.append(("field_types", f"alignments[{i}] must be an object"))
                continue
            if "concept_id" not in alignment:
                violations.append(("field_types", f"alignments[{i}].concept_id missing"))
            units = alignment.get("units")
            if not isinstance(units, list):
                violations.append(("field_types", f"alignments[{i}].units must be an array"))
                continue
            for j, unit in enumerate(units):
                if not isinstance(unit, dict):
                    violations.append(
                        ("field_types", f"alignments[{i}].units[{j}] must be an object")
                    )
                    continue
                for key in ("line_start", "line_end"):
                    if not isinstance(unit.get(key), int) or isinstance(unit.get(key), bool):
                        violations.append(
                            ("field_types", f"alignments[{i}].units[{j}].{key} must be an int")
                        )
                if "description" in unit and not isinstance(unit["description"], str):
                    violations.append(
                        ("field_types", f"alignments[{i}].units[{j}].description must be a string")
                    )
                if "text" in unit and not isinstance(unit["text"], str):
                    violations.append(
                        ("field_types", f"alignments[{i}].units[{j}].text must be a string")
                    )
    return violations


def _consistency_violations(record: dict) -> list[tuple[str, str]]:
    violations: list[tuple[str, str]] = []
    query: str = record["query"]
    code: str = record["code"]
    n_tokens = len(tokenize(query))
    n_lines = line_count(code)

    owner: dict[int, list[str]] = {}
    declared: set[str] = set()
    for concept in record["concepts"]:
        cid = str(concept["id"])
        declared.add(cid)
        for span in concept["spans"]:
            if span not in query:
                violations.append(
                    ("span_verbatim", f"concept {cid}: span {span!r} not found in query")
                )
        indices = concept["token_indices"]
        if not indices:
            violations.append(("token_indices_valid", f"concept {cid}: no token indices"))
        if any(b <= a for a, b in zip(indices, indices[1:])):
            violations.append(
                ("token_indices_valid", f"concept {cid}: indices not strictly increasing")
            )
        for idx in indices:
            if idx < 0 or idx >= n_tokens:
                violations.append(
                    (
                        "token_indices_valid",
                        f"concept {cid}: token index {idx} out of range 0..{n_tokens - 1}",
                    )
                )
            owner.setdefault(idx, []).append(cid)

    for idx in sorted(owner):
        ids = owner[idx]
        if len(ids) > 1:
            violations.append(
                (
                    "concept_overlap",
                    f"token {idx} assigned to concepts {', '.join(sorted(set(ids)))}",
                )
            )

    for alignment in record["alignments"]:
        cid = str(alignment["concept_id"])
        if cid not in declared:
            violations.append(
                ("alignment_concept_known", f"alignment references unknown concept {cid}")
            )
        for unit in alignment["units"]:
            start, end = unit["line_start"], unit["line_end"]
            if start < 0 or end < start or end >= n_lines:
                violations.append(
                    (
                        "unit_range",
                        f"concept {cid}: line range [{start}, {end}] outside code "
                        f"with {n_lines} lines",
                    )
                )
            text = unit.get("text")
            if text is not None and text not in code:
                violations.append(
                    ("unit_text_verbatim", f"concept {cid}: unit text {text!r} not found in code")
                )
    return violations


def validate(raw: str, record_id: str = "", attempt_index: int = 0) -> ValidationOutcome:
    """Validate one raw annotation record.  Pure; failures are data."""
    try:
        record = json.loads(raw)
    except (ValueError, TypeError) as exc:
        return ValidationOutcome(
            record_id=record_id,
            status=ValidationStatus.FORMAT_FAIL,
            violations=(("parseable", f"not valid JSON: {exc}"),),
            attempt_index=attempt_index,
        )

    format_violations = _format_violations(record)
    if format_violations:
        return ValidationOutcome(
            record_id=record_id,
            status=ValidationStatus.FORMAT_FAIL,
            violations=tuple(format_violations),
            attempt_index=attempt_index,
        )

    consistency = _consistency_violations(record)
    if consistency:
        return ValidationOutcome(
            record_id=record_id,
            status=ValidationStatus.CONSISTENCY_FAIL,
            violations=tuple(consistency),
            attempt_index=attempt_index,
        )
    return ValidationOutcome(
        record_id=record_id, status=ValidationStatus.PASS, attempt_index=attempt_index
    )


@dataclass
class RetryLedger:
    """Attempt accounting for a budgeted validation run.

    ``attempts[record_id]`` counts attempts actually consumed (at most
    ``budget + 1``); a record is discarded iff it exhausted them all without
    passing.
    """

    budget: int
    attempts: dict[str, int] = field(default_factory=dict)
    discarded: tuple[str, ...] = ()

    def retry_histogram(self) -> dict[int, int]:
        """retries used -> number of accepted records (discarded excluded)."""
        counts: Counter[int] = Counter()
        discarded = set(self.discarded)
        for record_id, n_attempts in self.attempts.items():
            if record_id not in discarded:
                counts[n_attempts - 1] += 1
        return dict(sorted(counts.items()))


@dataclass
class BudgetedRun:
    ledger: RetryLedger
    accepted: dict[str, str]  # record id -> raw text of the passing attempt
    outcomes: list[ValidationOutcome]


def run_budgeted(
    attempt_streams: Mapping[str, Iterable[str]] | Iterable[tuple[str, Iterable[str]]],
    budget: int = DEFAULT_RETRY_BUDGET,
) -> BudgetedRun:
    """Validate each record's attempt stream under a retry budget.

    A record is accepted on its first passing attempt and discarded after
    ``budget`` failed retries.  Streams shorter than the budget simply stop
    early (the record is discarded if nothing passed).
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    items = attempt_streams.items() if isinstance(attempt_streams, Mapping) else attempt_streams

    ledger = RetryLedger(budget=budget)
    accepted: dict[str, str] = {}
    outcomes: list[ValidationOutcome] = []
    discarded: list[str] = []
    for record_id, attempts in items:
        used = 0
        passed = False
        for attempt_index, raw in enumerate(attempts):
            if attempt_index > budget:
                break
            used += 1
            outcome = validate(raw, record_id=record_id, attempt_index=attempt_index)
            outcomes.append(outcome)
            if outcome.status is ValidationStatus.PASS:
                accepted[record_id] = raw
                passed = True
                break
        ledger.attempts[record_id] = used
        if not passed:
            discarded.append(record_id)
    ledger.discarded = tuple(discarded)
    return BudgetedRun(ledger=ledger, accepted=accepted, outcomes=outcomes)


class KappaResult(NamedTuple):
    value: float
    degenerate: bool = False


def cohen_kappa(a: Sequence[int], b: Sequence[int]) -> KappaResult:
    """Two-rater binary Cohen's kappa from parallel 0/1 judgment lists.

    When both raters are constant and identical, chance agreement is 1 and
    the ratio is undefined; agreement is perfect, so the value is defined as
    1.0 with the degenerate flag set.
    """
    if len(a) != len(b):
        raise ValueError("judgment lists must be parallel")
    if not a:
        raise ValueError("judgment lists are empty")
    for value in (*a, *b):
        if value not in (0, 1):
            raise ValueError("judgments must be binary 0/1")

    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    pa = sum(a) / n
    pb = sum(b) / n
    expected = pa * pb + (1.0 - pa) * (1.0 - pb)
    if expected == 1.0:
        return KappaResult(value=1.0, degenerate=True)
    return KappaResult(value=(observed - expected) / (1.0 - expected))


def validation_report(outcomes: Sequence[ValidationOutcome], ledger: RetryLedger | None = None) -> dict:
    """JSON-serializable summary: counts per status, retry histogram, discards."""
    counts = Counter(outcome.status.value for outcome in outcomes)
    report: dict = {
        "counts": {status.value: counts.get(status.value, 0) for status in ValidationStatus},
        "total_attempts": len(outcomes),
    }
    if ledger is not None:
        report["retry_budget"] = ledger.budget
        report["retry_histogram"] = {str(k): v for k, v in ledger.retry_histogram().items()}
        report["discarded_ids"] = list(ledger.discarded)
    return report
