"""HTTP face of an embedding provider.

Exposes the wire protocol consumed by
:class:`conceptsearch.embedding.RemoteEmbedProvider`:

* ``POST /v1/embed`` — ``{"text": str, "kind": "query"|"code",
  "ast_types": [str] | null}`` returns the tokens with offsets plus one
  embedding row per token.
* ``POST /v1/embed_reference`` — ``{"text": str}`` returns a single
  sentence-level vector.

Vectors are serialized as plain JSON floats; Python's float repr round-trips
float64 exactly, so the bytes a client decodes are the provider's values.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from conceptsearch.embedding import AstNodeType, EmbedProvider, EmbedRequest, TextKind


class EmbedBody(BaseModel):
    text: str
    kind: str = "query"
    ast_types: list[str] | None = None


class ReferenceBody(BaseModel):
    text: str


def make_embedding_app(provider: EmbedProvider) -> FastAPI:
    app = FastAPI(title="conceptsearch embedding service")

    @app.post("/v1/embed")
    def embed(body: EmbedBody) -> dict:
        try:
            kind = TextKind(body.kind)
            ast_types = (
                tuple(AstNodeType(t) for t in body.ast_types)
                if body.ast_types is not None
                else None
            )
            response = provider.embed(
                EmbedRequest(text=body.text, kind=kind, ast_types=ast_types)
            )
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "dimension": response.dimension,
            "tokens": [
                {
                    "text": t.text,
                    "start": t.start,
                    "end": t.end,
                    "line_index": t.line_index,
                }
                for t in response.tokens
            ],
            "embeddings": [[float(x) for x in row] for row in response.embeddings],
        }

    @app.post("/v1/embed_reference")
    def embed_reference(body: ReferenceBody) -> dict:
        try:
            vector = provider.embed_reference(body.text)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"dimension": int(vector.shape[0]), "embedding": [float(x) for x in vector]}

    return app
