"""Core domain types shared by every other module.

All types are frozen dataclasses: immutable after construction and safe to
share across threads.  Character offsets are unicode scalar positions (not
bytes), end-exclusive.

Concept spans are carried twice: as verbatim strings (the authority for the
consistency assertions in :mod:`conceptsearch.annotation`) and as token
indices (the authority for all numeric work).  Token indices refer to the
package tokenizer's tokenization of the pair's query text
(:func:`conceptsearch.tokenizer.tokenize`).

The on-disk annotation format is newline-delimited JSON, one pair per line,
UTF-8, with exactly these fields::

    {"query": str, "code": str, "language": str,
     "concepts": [{"id": str, "spans": [str, ...], "token_indices": [int, ...]}],
     "alignments": [{"concept_id": str,
                     "units": [{"line_start": int, "line_end": int,
                                "description": str}]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator, Sequence


class Language(str, Enum):
    RUBY = "ruby"
    JAVASCRIPT = "javascript"
    GO = "go"
    PYTHON = "python"
    JAVA = "java"
    PHP = "php"
    OTHER = "other"

    @classmethod
    def coerce(cls, value: "str | Language") -> "Language":
        """Map a language name onto the supported set, falling back to OTHER."""
        if isinstance(value, Language):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class Token:
    """A verbatim slice of a source text.

    ``line_index`` is the 0-based physical line (code only; None for query
    tokens).
    """

    text: str
    start: int
    end: int
    line_index: int | None = None

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad token offsets [{self.start}, {self.end})")
        if len(self.text) != self.end - self.start:
            raise ValueError("token text length does not match its offsets")


@dataclass(frozen=True)
class ConceptSpan:
    """Token indices of one functional concept within a query."""

    concept_id: str
    token_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = self.token_indices
        if not idx:
            raise ValueError(f"concept {self.concept_id!r} has no tokens")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(
                f"concept {self.concept_id!r}: token indices must be strictly increasing"
            )
        if idx[0] < 0:
            raise ValueError(f"concept {self.concept_id!r}: negative token index")


@dataclass(frozen=True)
class CodeUnit:
    """An inclusive 0-based line range plus its natural-language description.

    The description may be empty at inference time; it is required input for
    hardness scoring during training.
    """

    line_start: int
    line_end: int
    description: str = ""

    def __post_init__(self) -> None:
        if self.line_start < 0 or self.line_end < self.line_start:
            raise ValueError(f"bad line range [{self.line_start}, {self.line_end}]")


@dataclass(frozen=True)
class ConceptAnnotation:
    """One annotated query concept: id, verbatim span strings, token indices."""

    concept_id: str
    spans: tuple[str, ...]
    token_indices: tuple[int, ...]


@dataclass(frozen=True)
class Alignment:
    concept_id: str
    units: tuple[CodeUnit, ...]


@dataclass(frozen=True)
class AnnotatedPair:
    """A query-code pair enriched with concept spans and alignments.

    A code line may appear in several concepts' alignments; query tokens
    belong to at most one concept (absence from every span means the token
    carries no concept).
    """

    query: str
    code: str
    language: Language
    concepts: tuple[ConceptAnnotation, ...] = ()
    alignments: tuple[Alignment, ...] = ()


@dataclass(frozen=True)
class PartitionViolation:
    """One breach of the at-most-one-concept-per-token rule."""

    message: str
    concept_ids: tuple[str, ...] = ()
    token_indices: tuple[int, ...] = ()


def validate_concept_partition(
    pair: AnnotatedPair, query_token_count: int | None = None
) -> list[PartitionViolation]:
    """Check that the pair's concept spans partition the query tokens.

    Returns an empty list when every token index is in range, spans are
    pairwise disjoint, and every aligned concept id is declared.  Violations
    are data, not exceptions; the check is pure and idempotent.

    ``query_token_count`` defaults to the package tokenizer's count for
    ``pair.query``.
    """
    from conceptsearch.tokenizer import tokenize

    if query_token_count is None:
        query_token_count = len(tokenize(pair.query))

    violations: list[PartitionViolation] = []
    owner: dict[int, list[str]] = {}
    for concept in pair.concepts:
        for idx in concept.token_indices:
            if idx < 0 or idx >= query_token_count:
                violations.append(
                    PartitionViolation(
                        message=f"token index {idx} out of range 0..{query_token_count - 1}",
                        concept_ids=(concept.concept_id,),
                        token_indices=(idx,),
                    )
                )
            owner.setdefault(idx, []).append(concept.concept_id)

    for idx in sorted(owner):
        ids = owner[idx]
        if len(ids) > 1:
            violations.append(
                PartitionViolation(
                    message=f"token {idx} assigned to {len(ids)} concepts",
                    concept_ids=tuple(ids),
                    token_indices=(idx,),
                )
            )

    declared = {c.concept_id for c in pair.concepts}
    for alignment in pair.alignments:
        if alignment.concept_id not in declared:
            violations.append(
                PartitionViolation(
                    message=f"alignment references undeclared concept {alignment.concept_id!r}",
                    concept_ids=(alignment.concept_id,),
                )
            )
    return violations


def tokens_in_line(source: str, tokens: Sequence[Token], line: int) -> list[int]:
    """Indices of the tokens on one physical line of ``source``, in offset order.

    Raises ``IndexError`` for a line outside the source.
    """
    from conceptsearch.tokenizer import line_count

    n_lines = line_count(source)
    if line < 0 or line >= n_lines:
        raise IndexError(f"line {line} out of range 0..{n_lines - 1}")
    return [i for i, t in enumerate(tokens) if t.line_index == line]


# --- annotation file serialization -------------------------------------------


def pair_to_dict(pair: AnnotatedPair) -> dict:
    return {
        "query": pair.query,
        "code": pair.code,
        "language": pair.language.value,
        "concepts": [
            {
                "id": c.concept_id,
                "spans": list(c.spans),
                "token_indices": list(c.token_indices),
            }
            for c in pair.concepts
        ],
        "alignments": [
            {
                "concept_id": a.concept_id,
                "units": [
                    {
                        "line_start": u.line_start,
                        "line_end": u.line_end,
                        "description": u.description,
                    }
                    for u in a.units
                ],
            }
            for a in pair.alignments
        ],
    }


def pair_from_dict(record: dict) -> AnnotatedPair:
    return AnnotatedPair(
        query=record["query"],
        code=record["code"],
        language=Language.coerce(record["language"]),
        concepts=tuple(
            ConceptAnnotation(
                concept_id=str(c["id"]),
                spans=tuple(c["spans"]),
                token_indices=tuple(c["token_indices"]),
            )
            for c in record["concepts"]
        ),
        alignments=tuple(
            Alignment(
                concept_id=str(a["concept_id"]),
                units=tuple(
                    CodeUnit(
                        line_start=u["line_start"],
                        line_end=u["line_end"],
                        description=u.get("description", ""),
                    )
                    for u in a["units"]
                ),
            )
            for a in record["alignments"]
        ),
    )


def dump_pairs(pairs: Iterable[AnnotatedPair], fp: IO[str]) -> None:
    for pair in pairs:
        fp.write(json.dumps(pair_to_dict(pair), ensure_ascii=False) + "\n")


def load_pairs(fp: IO[str]) -> Iterator[AnnotatedPair]:
    for line in fp:
        line = line.strip()
        if line:
            yield pair_from_dict(json.loads(line))
