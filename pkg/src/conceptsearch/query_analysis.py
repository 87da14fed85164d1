"""Query-side concept extraction.

A linear probing head turns per-token embeddings into highlight
probabilities ``p_i = sigmoid(w . h_i + b)``.  Tokens with ``p_i`` strictly
above the highlight threshold are clustered agglomeratively with centroid
linkage: starting from singletons, the pair of clusters with the highest
centroid cosine is merged as long as that cosine strictly exceeds the
cluster threshold, recomputing centroids after every merge.  Ties are broken
by the pair's lowest minimum token index, then by the other cluster's
minimum, which makes the procedure fully deterministic.

Queries and code use separate heads.  Heads are training products loaded
from small binary artifact files; this module only evaluates them.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from conceptsearch.embedding import EmbedResponse, cosine, span_embedding

HEAD_MAGIC = b"CSPH"
HEAD_VERSION = 1
_KIND_CODES = {"query": 0, "code": 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

DEFAULT_DELTA_HIGHLIGHT = 0.4
DEFAULT_DELTA_CLUSTER = 0.8

# keeps scores strictly inside (0, 1) even for saturated logits
_P_EPS = 1e-15


@dataclass(frozen=True)
class ProbeHead:
    """Linear classifier over token embeddings: one weight vector and a bias."""

    kind: str  # "query" | "code"
    weights: np.ndarray
    bias: float

    def __post_init__(self) -> None:
        if self.kind not in _KIND_CODES:
            raise ValueError(f"head kind must be query or code, got {self.kind!r}")
        if self.weights.ndim != 1:
            raise ValueError("head weights must be a vector")

    @property
    def dimension(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, dimension: int, kind: str) -> "ProbeHead":
        """Head scoring every token exactly 0.5 (highlights everything at 0.4)."""
        return cls(kind=kind, weights=np.zeros(dimension), bias=0.0)

    @classmethod
    def seeded(cls, dimension: int, kind: str, seed: int = 0) -> "ProbeHead":
        rng = np.random.default_rng(seed)
        return cls(
            kind=kind,
            weights=rng.standard_normal(dimension) / np.sqrt(dimension),
            bias=float(rng.standard_normal()),
        )

    # -- artifact file format: magic, u32 version, u8 kind, u32 dimension,
    #    dimension float64 weights, one float64 bias; all little-endian ------

    def to_bytes(self) -> bytes:
        header = HEAD_MAGIC + struct.pack(
            "<IBI", HEAD_VERSION, _KIND_CODES[self.kind], self.dimension
        )
        body = self.weights.astype("<f8").tobytes() + struct.pack("<d", self.bias)
        return header + body

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ProbeHead":
        if blob[:4] != HEAD_MAGIC:
            raise ValueError("not a probe-head artifact (bad magic)")
        version, kind_code, dimension = struct.unpack_from("<IBI", blob, 4)
        if version != HEAD_VERSION:
            raise ValueError(f"unsupported probe-head version {version}")
        offset = 4 + struct.calcsize("<IBI")
        expected = offset + 8 * dimension + 8
        if len(blob) != expected:
            raise ValueError(f"probe-head artifact is {len(blob)} bytes, expected {expected}")
        weights = np.frombuffer(blob, dtype="<f8", count=dimension, offset=offset).copy()
        (bias,) = struct.unpack_from("<d", blob, offset + 8 * dimension)
        return cls(kind=_CODE_KINDS[kind_code], weights=weights, bias=bias)

    @classmethod
    def load(cls, path: str | Path) -> "ProbeHead":
        return cls.from_bytes(Path(path).read_bytes())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def score_highlights(response: EmbedResponse, head: ProbeHead) -> np.ndarray:
    """Per-token highlight probabilities, strictly inside (0, 1)."""
    if head.dimension != response.dimension:
        raise ValueError(
            f"head dimension {head.dimension} does not match provider dimension "
            f"{response.dimension}"
        )
    logits = response.embeddings @ head.weights + head.bias
    return np.clip(sigmoid(logits), _P_EPS, 1.0 - _P_EPS)


@dataclass(frozen=True)
class QueryConcept:
    """One extracted query concept: member token indices and their mean vector.

    The fallback concept (no token passed the highlight threshold) has no
    members and its centroid is the mean over all query tokens.
    """

    token_indices: tuple[int, ...]
    centroid: np.ndarray
    fallback: bool = False


def _pair_key(a: list[int], b: list[int]) -> tuple[int, int]:
    return (min(a[0], b[0]), max(a[0], b[0]))


def cluster_concepts(
    response: EmbedResponse,
    scores: np.ndarray,
    delta_highlight: float = DEFAULT_DELTA_HIGHLIGHT,
    delta_cluster: float = DEFAULT_DELTA_CLUSTER,
) -> list[QueryConcept]:
    """Group concept-bearing tokens into concepts by centroid-linkage clustering.

    Selection uses ``p_i > delta_highlight`` (strict); merging continues while
    the best centroid pair's cosine strictly exceeds ``delta_cluster``.  If no
    token passes the threshold a single fallback concept over the whole query
    is returned.  Resulting concepts are ordered by their minimum token index.
    """
    if not 0.0 < delta_highlight <= 1.0:
        raise ValueError("delta_highlight must lie in (0, 1]")
    if delta_cluster <= 0.0:
        raise ValueError("delta_cluster must be positive")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(response.tokens),):
        raise ValueError("scores are not parallel to tokens")

    selected = [i for i in range(len(scores)) if scores[i] > delta_highlight]
    if not selected:
        centroid = span_embedding(response.embeddings, range(len(response.tokens)))
        return [QueryConcept(token_indices=(), centroid=centroid, fallback=True)]

    # clusters as sorted member lists; centroids always recomputed as the
    # plain mean over members so the final centroid identity is exact
    clusters: list[list[int]] = [[i] for i in selected]
    centroids: list[np.ndarray] = [
        span_embedding(response.embeddings, c) for c in clusters
    ]

    while len(clusters) > 1:
        best: tuple[float, tuple[int, int], int, int] | None = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                sim = cosine(centroids[i], centroids[j])
                key = _pair_key(clusters[i], clusters[j])
                if best is None or sim > best[0] or (sim == best[0] and key < best[1]):
                    best = (sim, key, i, j)
        assert best is not None
        sim, _, i, j = best
        if sim <= delta_cluster:
            break
        merged = sorted(clusters[i] + clusters[j])
        del clusters[j], centroids[j]  # j > i, delete higher index first
        clusters[i] = merged
        centroids[i] = span_embedding(response.embeddings, merged)

    order = sorted(range(len(clusters)), key=lambda k: clusters[k][0])
    return [
        QueryConcept(
            token_indices=tuple(clusters[k]),
            centroid=span_embedding(response.embeddings, clusters[k]),
            fallback=False,
        )
        for k in order
    ]
