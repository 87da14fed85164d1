"""Corpus ingestion, persistence, and the search entry point.

The index is a directory: a JSON manifest, the two probe-head artifacts, and
append-only binary segment files holding one record per ingested snippet
(length-prefixed JSON header followed by raw little-endian float64 blocks:
per-token highlight scores, then per-retained-line vectors).  The manifest is
written to a temporary file and atomically swapped into place, so an
interrupted ingest leaves the previous generation readable.  Re-ingesting an
id appends a fresh record and repoints the manifest at it.

Analysis (tokens, AST types, line structure) is recomputed from the stored
source on open — it is a pure function of (source, language) — while vectors
and highlight scores round-trip bit-exactly from the segment bytes.

Search is a brute-force scan: the per-line maxima of the score need every
retained line, so there is nothing for an ANN structure to index at desk
scale.  Query highlight scoring happens per search; corpus highlight scoring
happened at ingest.  Searches refuse to run when the manifest's provider
fingerprint differs from the live provider.
"""

from __future__ import annotations

import json
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from conceptsearch.code_analysis import AnalyzedCode, LineEmbedding, analyze
from conceptsearch.embedding import (
    EmbedProvider,
    EmbedRequest,
    EmbedError,
    TextKind,
)
from conceptsearch.matching import DotProductCounter, ExplainedResult, rank
from conceptsearch.model import Language, Token
from conceptsearch.query_analysis import (
    DEFAULT_DELTA_CLUSTER,
    DEFAULT_DELTA_HIGHLIGHT,
    ProbeHead,
    QueryConcept,
    cluster_concepts,
    score_highlights,
)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
QUERY_HEAD_NAME = "query.head"
CODE_HEAD_NAME = "code.head"


class IndexStoreError(RuntimeError):
    """Base class for index failures."""


class DuplicateIdError(IndexStoreError):
    def __init__(self, ids: Sequence[str]) -> None:
        super().__init__(f"duplicate candidate ids in corpus: {', '.join(sorted(ids))}")
        self.ids = tuple(sorted(ids))


class ProviderMismatchError(IndexStoreError):
    """The live provider does not match the manifest's fingerprint."""


class CorruptIndexError(IndexStoreError):
    pass


@dataclass
class CorpusEntry:
    """One analyzed, embedded, highlight-scored snippet."""

    candidate_id: str
    source: str
    language: Language
    analyzed: AnalyzedCode
    token_highlights: np.ndarray  # (n_tokens,)
    line_vectors: np.ndarray  # (n_retained_lines, dim)
    line_indices: list[int]  # physical line index per retained line
    line_max_highlight: np.ndarray  # (n_retained_lines,)

    def line_embeddings(self, delta_highlight: float) -> list[LineEmbedding]:
        return [
            LineEmbedding(
                line_index=self.line_indices[i],
                vector=self.line_vectors[i],
                concept_bearing=bool(self.line_max_highlight[i] > delta_highlight),
                max_highlight=float(self.line_max_highlight[i]),
            )
            for i in range(len(self.line_indices))
        ]


@dataclass
class IngestStats:
    added: list[str] = field(default_factory=list)
    replaced: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    total_tokens: int = 0


@dataclass
class SearchStats:
    entries_scanned: int = 0
    concepts: int = 0
    retained_lines_total: int = 0
    dot_products: int = 0


@dataclass
class SearchOutcome:
    results: list[ExplainedResult]
    concepts: list[QueryConcept]
    query_tokens: tuple[Token, ...]
    diagnostics: list[str]
    stats: SearchStats


def _provider_fingerprint(provider: EmbedProvider, query_head: ProbeHead, code_head: ProbeHead) -> dict:
    return {
        "name": provider.fingerprint,
        "dimension": provider.dimension,
        "query_head_sha256": query_head.checksum(),
        "code_head_sha256": code_head.checksum(),
    }


class Index:
    """A single-directory corpus index.

    One writer or many readers per generation; every successful ingest swaps
    in a new manifest generation atomically.
    """

    def __init__(
        self,
        path: Path,
        provider: EmbedProvider,
        query_head: ProbeHead,
        code_head: ProbeHead,
        manifest: dict,
        entries: dict[str, CorpusEntry],
    ) -> None:
        self.path = path
        self.provider = provider
        self.query_head = query_head
        self.code_head = code_head
        self._manifest = manifest
        self._entries = entries

    # -- lifecycle -------------------------------------------------------------

    @classmethod
    def create(
        cls,
        path: str | Path,
        provider: EmbedProvider,
        query_head: ProbeHead | None = None,
        code_head: ProbeHead | None = None,
    ) -> "Index":
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        if (path / MANIFEST_NAME).exists():
            raise IndexStoreError(f"index already exists at {path}")
        query_head = query_head or ProbeHead.zeros(provider.dimension, "query")
        code_head = code_head or ProbeHead.zeros(provider.dimension, "code")
        if query_head.dimension != provider.dimension or code_head.dimension != provider.dimension:
            raise ProviderMismatchError("head dimension differs from provider dimension")
        query_head.save(path / QUERY_HEAD_NAME)
        code_head.save(path / CODE_HEAD_NAME)
        manifest = {
            "format_version": FORMAT_VERSION,
            "provider": _provider_fingerprint(provider, query_head, code_head),
            "generation": 0,
            "segments": [],
            "entries": {},
        }
        index = cls(path, provider, query_head, code_head, manifest, {})
        index._write_manifest()
        return index

    @classmethod
    def open(cls, path: str | Path, provider: EmbedProvider) -> "Index":
        path = Path(path)
        manifest_path = path / MANIFEST_NAME
        if not manifest_path.exists():
            raise IndexStoreError(f"no index manifest at {path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CorruptIndexError(
                f"unsupported index format version {manifest.get('format_version')}"
            )
        query_head = ProbeHead.load(path / QUERY_HEAD_NAME)
        code_head = ProbeHead.load(path / CODE_HEAD_NAME)
        recorded = manifest["provider"]
        live = _provider_fingerprint(provider, query_head, code_head)
        if recorded != live:
            raise ProviderMismatchError(
                f"index was built with {recorded}, live provider is {live}"
            )
        entries: dict[str, CorpusEntry] = {}
        for candidate_id, location in manifest["entries"].items():
            entries[candidate_id] = _read_record(
                path / location["segment"], location["offset"], provider.dimension
            )
        return cls(path, provider, query_head, code_head, manifest, entries)

    # -- ingest ------------------------------------------------------------------

    def ingest(self, corpus: Iterable[tuple[str, str, str | Language]]) -> IngestStats:
        """Analyze, embed, score, and persist every corpus item.

        Ids must be unique within the call; re-ingesting an existing id
        replaces its entry.  Per-entry provider failures are skipped and
        reported while the ingest continues.
        """
        items = list(corpus)
        counts = Counter(candidate_id for candidate_id, _, _ in items)
        duplicates = [candidate_id for candidate_id, n in counts.items() if n > 1]
        if duplicates:
            raise DuplicateIdError(duplicates)

        stats = IngestStats()
        segment_name = f"segment-{len(self._manifest['segments']) + 1:06d}.bin"
        segment_path = self.path / segment_name
        new_locations: dict[str, dict] = {}
        new_entries: dict[str, CorpusEntry] = {}
        with open(segment_path, "wb") as segment:
            offset = 0
            for candidate_id, source, language in items:
                try:
                    entry = self._build_entry(candidate_id, source, language)
                except (EmbedError, ValueError) as exc:
                    stats.skipped.append((candidate_id, str(exc)))
                    continue
                blob = _record_bytes(entry)
                segment.write(blob)
                new_locations[candidate_id] = {
                    "segment": segment_name,
                    "offset": offset,
                    "length": len(blob),
                }
                new_entries[candidate_id] = entry
                offset += len(blob)
                stats.total_tokens += len(entry.analyzed.tokens)
                if candidate_id in self._entries:
                    stats.replaced.append(candidate_id)
                else:
                    stats.added.append(candidate_id)
            segment.flush()
            os.fsync(segment.fileno())

        if not new_locations:
            segment_path.unlink()
            return stats

        self._manifest["segments"].append(segment_name)
        self._manifest["entries"].update(new_locations)
        self._manifest["generation"] += 1
        self._entries.update(new_entries)
        self._write_manifest()
        return stats

    def _build_entry(self, candidate_id: str, source: str, language: str | Language) -> CorpusEntry:
        language = Language.coerce(language)
        analyzed = analyze(source, language)
        response = self.provider.embed(
            EmbedRequest(text=source, kind=TextKind.CODE, ast_types=analyzed.ast_types)
        )
        highlights = score_highlights(response, self.code_head)
        line_indices: list[int] = []
        vectors: list[np.ndarray] = []
        maxima: list[float] = []
        for line in analyzed.lines:
            if line.is_blank:
                continue
            line_indices.append(line.line_index)
            vectors.append(
                response.embeddings[line.token_start : line.token_end].mean(axis=0)
            )
            maxima.append(float(highlights[line.token_start : line.token_end].max()))
        return CorpusEntry(
            candidate_id=candidate_id,
            source=source,
            language=language,
            analyzed=analyzed,
            token_highlights=np.asarray(highlights, dtype=np.float64),
            line_vectors=np.array(vectors, dtype=np.float64)
            if vectors
            else np.zeros((0, self.provider.dimension)),
            line_indices=line_indices,
            line_max_highlight=np.asarray(maxima, dtype=np.float64),
        )

    def _write_manifest(self) -> None:
        target = self.path / MANIFEST_NAME
        tmp = self.path / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(self._manifest, indent=1), encoding="utf-8")
        os.replace(tmp, target)

    # -- queries --------------------------------------------------------------------

    def entry_ids(self) -> list[str]:
        return sorted(self._entries)

    def entry(self, candidate_id: str) -> CorpusEntry:
        return self._entries[candidate_id]

    @property
    def entry_count(self) -> int:
        return len(self._entries)

    @property
    def provider_fingerprint(self) -> dict:
        return dict(self._manifest["provider"])

    def search(
        self,
        query: str,
        top_k: int = 10,
        delta_highlight: float | None = None,
        delta_cluster: float | None = None,
        counter: DotProductCounter | None = None,
    ) -> SearchOutcome:
        """Rank every entry against the query and keep the top ``top_k``."""
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        delta_highlight = DEFAULT_DELTA_HIGHLIGHT if delta_highlight is None else delta_highlight
        delta_cluster = DEFAULT_DELTA_CLUSTER if delta_cluster is None else delta_cluster

        recorded = self._manifest["provider"]
        live = _provider_fingerprint(self.provider, self.query_head, self.code_head)
        if recorded != live:
            raise ProviderMismatchError(
                f"index was built with {recorded}, live provider is {live}"
            )

        response = self.provider.embed(EmbedRequest(text=query, kind=TextKind.QUERY))
        scores = score_highlights(response, self.query_head)
        concepts = cluster_concepts(response, scores, delta_highlight, delta_cluster)

        stats = SearchStats(concepts=len(concepts))
        diagnostics: list[str] = []
        if not self._entries:
            diagnostics.append("index is empty")
            return SearchOutcome([], concepts, response.tokens, diagnostics, stats)

        counter = counter if counter is not None else DotProductCounter()
        count_start = counter.count
        candidates = []
        for candidate_id in self.entry_ids():
            entry = self._entries[candidate_id]
            lines = entry.line_embeddings(delta_highlight)
            stats.entries_scanned += 1
            stats.retained_lines_total += sum(1 for l in lines if l.concept_bearing)
            candidates.append((candidate_id, lines))
        results = rank(concepts, candidates, counter=counter)
        stats.dot_products = counter.count - count_start
        if any(c.fallback for c in concepts):
            diagnostics.append("no token passed the highlight threshold; whole-query fallback concept used")
        return SearchOutcome(results[:top_k], concepts, response.tokens, diagnostics, stats)


# --- record encoding -----------------------------------------------------------------


def _record_bytes(entry: CorpusEntry) -> bytes:
    n_lines = len(entry.line_indices)
    header = {
        "id": entry.candidate_id,
        "language": entry.language.value,
        "source": entry.source,
        "n_tokens": len(entry.analyzed.tokens),
        "n_lines": n_lines,
        "dim": int(entry.line_vectors.shape[1]),
    }
    header_bytes = json.dumps(header, ensure_ascii=False).encode("utf-8")
    payload = (
        entry.token_highlights.astype("<f8").tobytes()
        + entry.line_vectors.astype("<f8").tobytes()
    )
    return struct.pack("<I", len(header_bytes)) + header_bytes + payload


def _read_record(segment_path: Path, offset: int, dimension: int) -> CorpusEntry:
    with open(segment_path, "rb") as fp:
        fp.seek(offset)
        (header_len,) = struct.unpack("<I", fp.read(4))
        header = json.loads(fp.read(header_len).decode("utf-8"))
        n_tokens = header["n_tokens"]
        n_lines = header["n_lines"]
        dim = header["dim"]
        highlights = np.frombuffer(fp.read(8 * n_tokens), dtype="<f8").copy()
        vectors = (
            np.frombuffer(fp.read(8 * n_lines * dim), dtype="<f8").reshape(n_lines, dim).copy()
            if n_lines
            else np.zeros((0, dimension))
        )

    language = Language.coerce(header["language"])
    analyzed = analyze(header["source"], language)
    if len(analyzed.tokens) != n_tokens:
        raise CorruptIndexError(
            f"entry {header['id']!r}: stored token count {n_tokens} does not match analysis"
        )
    line_indices = [line.line_index for line in analyzed.lines if not line.is_blank]
    if len(line_indices) != n_lines:
        raise CorruptIndexError(
            f"entry {header['id']!r}: stored line count {n_lines} does not match analysis"
        )
    maxima = np.array(
        [
            highlights[line.token_start : line.token_end].max()
            for line in analyzed.lines
            if not line.is_blank
        ],
        dtype=np.float64,
    )
    return CorpusEntry(
        candidate_id=header["id"],
        source=header["source"],
        language=language,
        analyzed=analyzed,
        token_highlights=highlights,
        line_vectors=vectors,
        line_indices=line_indices,
        line_max_highlight=maxima,
    )
