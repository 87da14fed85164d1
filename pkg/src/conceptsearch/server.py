"""HTTP search API over an open index.

* ``POST /v1/search`` — ``{"query": str, "top_k": int,
  "delta_highlight": float?, "delta_cluster": float?}`` returns the query's
  concepts (member token character spans, fallback flag) and the ranked
  results with per-concept matched lines.
* ``GET /v1/health`` — entry count and provider fingerprint.
* ``POST /v1/index`` — uploads corpus entries ``{"entries": [{"id", "source",
  "language"}]}`` into the open index (single writer).

An optional static directory (the search console build) is mounted at the
root so the UI and the API share one origin.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from conceptsearch.index import DuplicateIdError, Index, ProviderMismatchError


class SearchBody(BaseModel):
    query: str
    top_k: int = Field(default=10, ge=1)
    delta_highlight: float | None = None
    delta_cluster: float | None = None


class CorpusItem(BaseModel):
    id: str
    source: str
    language: str = "other"


class IndexBody(BaseModel):
    entries: list[CorpusItem]


def make_search_app(index: Index, console_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="conceptsearch")
    write_lock = threading.Lock()

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "status": "ok",
            "entries": index.entry_count,
            "provider": index.provider_fingerprint,
        }

    @app.post("/v1/search")
    def search(body: SearchBody) -> dict:
        try:
            outcome = index.search(
                body.query,
                top_k=body.top_k,
                delta_highlight=body.delta_highlight,
                delta_cluster=body.delta_cluster,
            )
        except ProviderMismatchError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        concepts = []
        for k, concept in enumerate(outcome.concepts):
            spans = [
                [outcome.query_tokens[i].start, outcome.query_tokens[i].end]
                for i in concept.token_indices
            ]
            concepts.append({"id": k, "token_spans": spans, "fallback": concept.fallback})
        results = []
        for result in outcome.results:
            results.append(
                {
                    "id": result.candidate_id,
                    "score": result.score,
                    "degenerate": result.degenerate,
                    "matches": [
                        {
                            "concept": m.concept,
                            "line": m.line_index,
                            "similarity": m.similarity,
                        }
                        for m in result.matches
                    ],
                    "source": index.entry(result.candidate_id).source,
                }
            )
        return {"concepts": concepts, "results": results}

    @app.post("/v1/index")
    def ingest(body: IndexBody) -> dict:
        with write_lock:
            try:
                stats = index.ingest(
                    (item.id, item.source, item.language) for item in body.entries
                )
            except DuplicateIdError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
        return {
            "added": stats.added,
            "replaced": stats.replaced,
            "skipped": [{"id": cid, "error": err} for cid, err in stats.skipped],
        }

    if console_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app
