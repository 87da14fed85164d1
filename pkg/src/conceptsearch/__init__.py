"""conceptsearch: explainable code search via concept-to-line alignment.

Queries are decomposed into functional concepts, each concept is aligned to
the code line that implements it, and candidates are ranked by how well they
cover every concept, so the ranking itself is the explanation.
"""

__version__ = "0.1.0"

from conceptsearch.embedding import (
    AstNodeType,
    EmbedRequest,
    EmbedResponse,
    RemoteEmbedProvider,
    TestEmbedProvider,
    TextKind,
    cosine,
    span_embedding,
)
from conceptsearch.index import Index
from conceptsearch.matching import ExplainedResult, match, rank
from conceptsearch.model import (
    Alignment,
    AnnotatedPair,
    CodeUnit,
    ConceptAnnotation,
    ConceptSpan,
    Language,
    Token,
    validate_concept_partition,
)
from conceptsearch.query_analysis import ProbeHead, QueryConcept, cluster_concepts, score_highlights

__all__ = [
    "AstNodeType",
    "Alignment",
    "AnnotatedPair",
    "CodeUnit",
    "ConceptAnnotation",
    "ConceptSpan",
    "EmbedRequest",
    "EmbedResponse",
    "ExplainedResult",
    "Index",
    "Language",
    "ProbeHead",
    "QueryConcept",
    "RemoteEmbedProvider",
    "TestEmbedProvider",
    "TextKind",
    "Token",
    "cluster_concepts",
    "cosine",
    "match",
    "rank",
    "score_highlights",
    "span_embedding",
    "validate_concept_partition",
    "__version__",
]
