"""Per-token contextual embedding providers and the vector operations on them.

Vectors are float64 numpy arrays; a response's embeddings form an (N, D)
matrix parallel to its tokens.  Three provider implementations share one
contract:

* :class:`TestEmbedProvider` — deterministic, dependency-free.  Each token's
  vector is a seeded pseudo-random function (PRF) of its exact text, unit
  normalized; an AST node type contributes a second PRF vector keyed by the
  type, after which the sum is renormalized.  Same input, bit-identical
  output, which is what makes exact oracles possible in tests.
* :class:`RemoteEmbedProvider` — HTTP client for the embedding-service wire
  protocol (``POST /v1/embed`` and ``POST /v1/embed_reference``).  It never
  alters vectors: the floats decoded from the response are the floats
  returned.
* the reference text encoder ``embed_reference`` — a frozen sentence-level
  encoder used only to estimate negative hardness during training.  The test
  implementation draws from a PRF keyspace disjoint from the token keyspace.

The span mean is a plain arithmetic mean and is deliberately not
renormalized; cosine similarity handles magnitude.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol

import numpy as np

from conceptsearch.model import Token
from conceptsearch.tokenizer import tokenize

DEGENERATE_NORM = 1e-12
DEFAULT_DIMENSION = 64


class AstNodeType(str, Enum):
    """Coarse, language-portable node types for code tokens (20 values)."""

    IDENTIFIER = "identifier"
    CALL = "call"
    NUMBER_LITERAL = "number-literal"
    STRING_LITERAL = "string-literal"
    OTHER_LITERAL = "other-literal"
    OPERATOR = "operator"
    ASSIGNMENT = "assignment"
    CONTROL_KEYWORD = "control-keyword"
    DECLARATION_KEYWORD = "declaration-keyword"
    TYPE_NAME = "type-name"
    PARAMETER = "parameter"
    FIELD_ACCESS = "field-access"
    COMMENT = "comment"
    RETURN_STMT = "return-stmt"
    LOOP_CONSTRUCT = "loop-construct"
    CONDITIONAL_CONSTRUCT = "conditional-construct"
    IMPORT_STMT = "import-stmt"
    FUNCTION_DEFINITION = "function-definition"
    CLASS_DEFINITION = "class-definition"
    OTHER = "other"


class TextKind(str, Enum):
    QUERY = "query"
    CODE = "code"


@dataclass(frozen=True)
class EmbedRequest:
    """Input to a provider.  ``ast_types`` is allowed for code only and must
    carry one entry per token the tokenizer produces for ``text``."""

    text: str
    kind: TextKind = TextKind.QUERY
    ast_types: tuple[AstNodeType, ...] | None = None


@dataclass(frozen=True)
class EmbedResponse:
    """Tokens plus their parallel (N, D) embedding matrix."""

    tokens: tuple[Token, ...]
    embeddings: np.ndarray
    dimension: int

    def __post_init__(self) -> None:
        if self.embeddings.shape != (len(self.tokens), self.dimension):
            raise ValueError(
                f"embedding matrix {self.embeddings.shape} does not match "
                f"{len(self.tokens)} tokens x {self.dimension}"
            )
        if not np.all(np.isfinite(self.embeddings)):
            raise ValueError("non-finite values in embeddings")


class EmbedError(RuntimeError):
    """Base class for provider failures."""


class EmbedTransportError(EmbedError):
    """The embedding service could not be reached."""


class EmbedProtocolError(EmbedError):
    """The embedding service answered with a malformed response."""


class DimensionMismatchError(EmbedError):
    """A response's dimension differs from the session's pinned dimension."""


class EmbedProvider(Protocol):
    dimension: int

    @property
    def fingerprint(self) -> str: ...

    def embed(self, request: EmbedRequest) -> EmbedResponse: ...

    def embed_reference(self, text: str) -> np.ndarray: ...


def _require_nonempty(text: str) -> None:
    if not text.strip():
        raise ValueError("text is empty after whitespace trim")


class TestEmbedProvider:
    """Deterministic context-free embedder backed by a keyed hash.

    Uniform bits come from BLAKE2b over (seed, namespace, text, block); a
    Box-Muller transform turns them into gaussian components, so vectors are
    uniformly distributed directions and the construction is stable across
    platforms and library versions.
    """

    __test__ = False  # not a test class despite the name

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0) -> None:
        if dimension < 2:
            raise ValueError("dimension must be >= 2")
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    @property
    def fingerprint(self) -> str:
        return f"test-prf:d{self.dimension}:s{self.seed}"

    # -- PRF core ------------------------------------------------------------

    def _uniforms(self, namespace: str, text: str, count: int) -> np.ndarray:
        """``count`` uniforms in (0, 1], 8 hash bytes each."""
        raw = bytearray()
        block = 0
        payload = namespace.encode() + b"\x1f" + text.encode()
        while len(raw) < count * 8:
            h = hashlib.blake2b(
                payload + b"\x1f" + block.to_bytes(4, "little"),
                key=self._key,
                digest_size=64,
            )
            raw.extend(h.digest())
            block += 1
        ints = np.frombuffer(bytes(raw[: count * 8]), dtype="<u8")
        return ((ints >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def _unit_vector(self, namespace: str, text: str) -> np.ndarray:
        key = (namespace, text)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        pairs = (self.dimension + 1) // 2
        u = self._uniforms(namespace, text, 2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        normal = np.empty(2 * pairs)
        normal[0::2] = radius * np.cos(angle)
        normal[1::2] = radius * np.sin(angle)
        vec = normal[: self.dimension]
        vec = vec / np.linalg.norm(vec)
        vec.setflags(write=False)
        self._cache[key] = vec
        return vec

    # -- provider contract -----------------------------------------------------

    def token_vector(self, text: str, ast_type: AstNodeType | None = None) -> np.ndarray:
        """Base PRF vector of the token text, shifted by the type vector if given."""
        base = self._unit_vector("tok", text)
        if ast_type is None:
            return base
        combined = base + self._unit_vector("ast", ast_type.value)
        return combined / np.linalg.norm(combined)

    def embed(self, request: EmbedRequest) -> EmbedResponse:
        _require_nonempty(request.text)
        if request.ast_types is not None and request.kind is not TextKind.CODE:
            raise ValueError("ast_types are only valid for code requests")
        tokens = tuple(
            tokenize(request.text, with_lines=request.kind is TextKind.CODE)
        )
        if request.ast_types is not None and len(request.ast_types) != len(tokens):
            raise ValueError(
                f"ast_types has {len(request.ast_types)} entries for {len(tokens)} tokens"
            )
        matrix = np.empty((len(tokens), self.dimension))
        for i, token in enumerate(tokens):
            ast = request.ast_types[i] if request.ast_types is not None else None
            matrix[i] = self.token_vector(token.text, ast)
        return EmbedResponse(tokens=tokens, embeddings=matrix, dimension=self.dimension)

    def embed_reference(self, text: str) -> np.ndarray:
        _require_nonempty(text)
        return self._unit_vector("ref", text)


class RemoteEmbedProvider:
    """Client for the embedding-service wire protocol.

    The session dimension is pinned by the first successful response; any
    later response with a different dimension raises
    :class:`DimensionMismatchError`.  Transport failures and malformed
    payloads are reported as distinct error types.
    """

    def __init__(self, base_url: str, client=None, timeout: float = 30.0) -> None:
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self.dimension: int = 0  # pinned on first response

    @property
    def fingerprint(self) -> str:
        return f"remote:{self.base_url}:d{self.dimension}"

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        try:
            response = self._client.post(self.base_url + path, json=body)
        except httpx.HTTPError as exc:
            raise EmbedTransportError(f"POST {path}: {exc}") from exc
        if response.status_code != 200:
            raise EmbedProtocolError(
                f"POST {path}: status {response.status_code}: {response.text[:200]}"
            )
        try:
            payload = response.json()
        except ValueError as exc:
            raise EmbedProtocolError(f"POST {path}: body is not JSON") from exc
        if not isinstance(payload, dict):
            raise EmbedProtocolError(f"POST {path}: expected a JSON object")
        return payload

    def _pin_dimension(self, dimension: object) -> int:
        if not isinstance(dimension, int) or dimension <= 0:
            raise EmbedProtocolError(f"bad dimension in response: {dimension!r}")
        if self.dimension == 0:
            self.dimension = dimension
        elif dimension != self.dimension:
            raise DimensionMismatchError(
                f"service returned dimension {dimension}, session pinned {self.dimension}"
            )
        return dimension

    def embed(self, request: EmbedRequest) -> EmbedResponse:
        _require_nonempty(request.text)
        body = {
            "text": request.text,
            "kind": request.kind.value,
            "ast_types": [t.value for t in request.ast_types]
            if request.ast_types is not None
            else None,
        }
        payload = self._post("/v1/embed", body)
        try:
            dimension = self._pin_dimension(payload["dimension"])
            tokens = tuple(
                Token(
                    text=t["text"],
                    start=t["start"],
                    end=t["end"],
                    line_index=t["line_index"],
                )
                for t in payload["tokens"]
            )
            rows = payload["embeddings"]
            if len(rows) != len(tokens) or any(len(r) != dimension for r in rows):
                raise EmbedProtocolError(
                    "embeddings are not parallel to tokens at the stated dimension"
                )
            matrix = np.array(rows, dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbedProtocolError(f"malformed embed response: {exc}") from exc
        if not np.all(np.isfinite(matrix)):
            raise EmbedProtocolError("non-finite values in embed response")
        return EmbedResponse(tokens=tokens, embeddings=matrix, dimension=dimension)

    def embed_reference(self, text: str) -> np.ndarray:
        _require_nonempty(text)
        payload = self._post("/v1/embed_reference", {"text": text})
        try:
            dimension = self._pin_dimension(payload["dimension"])
            vector = np.array(payload["embedding"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise EmbedProtocolError(f"malformed embed_reference response: {exc}") from exc
        if vector.shape != (dimension,) or not np.all(np.isfinite(vector)):
            raise EmbedProtocolError("bad embedding vector in embed_reference response")
        return vector


# --- vector operations ---------------------------------------------------------


def span_embedding(embeddings: np.ndarray, indices: Iterable[int]) -> np.ndarray:
    """Component-wise arithmetic mean of the member vectors (not renormalized)."""
    idx = list(indices)
    if not idx:
        raise ValueError("span is empty")
    n = embeddings.shape[0]
    for i in idx:
        if i < 0 or i >= n:
            raise IndexError(f"token index {i} out of range 0..{n - 1}")
    return embeddings[idx].mean(axis=0)


def cosine_flagged(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Cosine similarity clamped to [-1, 1], plus a degenerate-input flag.

    A vector with norm below ``DEGENERATE_NORM`` yields (0.0, True) instead of
    an error so that retrieval never aborts on a pathological span.
    """
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_sq_a = float(np.dot(a, a))
    norm_sq_b = float(np.dot(b, b))
    if norm_sq_a < DEGENERATE_NORM**2 or norm_sq_b < DEGENERATE_NORM**2:
        return 0.0, True
    # sqrt(d * d) == d exactly in IEEE 754, so cos(v, v) is exactly 1.0;
    # np.clip (unlike min/max) propagates NaN instead of masking it
    value = float(np.dot(a, b) / math.sqrt(norm_sq_a * norm_sq_b))
    return float(np.clip(value, -1.0, 1.0)), False


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return cosine_flagged(a, b)[0]
