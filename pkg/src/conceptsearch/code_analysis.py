"""Line segmentation and coarse AST-type tagging for code snippets.

The tagger is a lightweight per-language lexical grammar.  It first scans the
source for comment and string regions using the language's delimiters, then
classifies every token (the shared tokenizer's tokens) into a fine-grained
node kind: ``kw_<word>`` for keywords, ``ty_<word>`` for builtin type names,
plus structural kinds (``identifier``, ``call``, ``def_name``, ``class_name``,
``parameter``, ``field``, ``number``, ``string``, ``comment``, ``assign_op``,
``operator``, ``delimiter``).  Node kinds are mapped onto the 20 coarse
:class:`~conceptsearch.embedding.AstNodeType` values through per-language
two-column data files (``data/ast_types/<language>.map``, format
``node_kind<TAB>coarse_type``).  The keyword and type-name inventories are
derived from those same files, so the whole grammar is reviewable as data.

``analyze`` is total: any internal tagging failure degrades to the ``other``
type for every token and is recorded as a diagnostic, never an exception.
Inference works on raw physical lines; multi-line unit merging exists only in
annotation records, which carry explicit line ranges.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from conceptsearch.embedding import AstNodeType, EmbedResponse, span_embedding
from conceptsearch.model import Language, Token
from conceptsearch.tokenizer import line_count, tokenize

_NUMBER_RE = re.compile(r"\d\w*")
_WORD_RE = re.compile(r"\w+")
_OPERATOR_CHARS = set("+-*/%<>=!&|^~?.@$#\\")


@dataclass(frozen=True)
class LineInfo:
    """One physical source line: its token range and whether it is blank."""

    line_index: int
    token_start: int
    token_end: int
    is_blank: bool


@dataclass(frozen=True)
class AnalyzedCode:
    source: str
    language: Language
    tokens: tuple[Token, ...]
    node_kinds: tuple[str, ...]
    ast_types: tuple[AstNodeType, ...]
    lines: tuple[LineInfo, ...]
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class LineEmbedding:
    """Mean vector over ALL tokens of one retained line.

    ``max_highlight`` is the largest per-token highlight probability on the
    line; the line is concept-bearing iff that maximum strictly exceeds the
    highlight threshold.
    """

    line_index: int
    vector: np.ndarray
    concept_bearing: bool
    max_highlight: float


# --- per-language grammar data -------------------------------------------------


@dataclass(frozen=True)
class _Syntax:
    line_comments: tuple[str, ...]
    block_comments: tuple[tuple[str, str], ...]
    string_delims: tuple[str, ...]  # longest first


_SYNTAX: dict[Language, _Syntax] = {
    Language.PYTHON: _Syntax(("#",), (), ('"""', "'''", '"', "'")),
    Language.RUBY: _Syntax(("#",), (("=begin", "=end"),), ('"', "'")),
    Language.JAVASCRIPT: _Syntax(("//",), (("/*", "*/"),), ("`", '"', "'")),
    Language.GO: _Syntax(("//",), (("/*", "*/"),), ("`", '"', "'")),
    Language.JAVA: _Syntax(("//",), (("/*", "*/"),), ('"', "'")),
    Language.PHP: _Syntax(("//", "#"), (("/*", "*/"),), ('"', "'")),
}


def _load_mapping(language: Language) -> dict[str, AstNodeType]:
    text = (
        resources.files("conceptsearch.data.ast_types")
        .joinpath(f"{language.value}.map")
        .read_text(encoding="utf-8")
    )
    mapping: dict[str, AstNodeType] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, _, coarse = line.partition("\t")
        mapping[kind.strip()] = AstNodeType(coarse.strip())
    return mapping


_MAPPING_CACHE: dict[Language, dict[str, AstNodeType]] = {}


def node_kind_mapping(language: Language) -> dict[str, AstNodeType]:
    """The committed node-kind to coarse-type table for one language."""
    if language not in _MAPPING_CACHE:
        _MAPPING_CACHE[language] = _load_mapping(language)
    return _MAPPING_CACHE[language]


# --- region scanning -----------------------------------------------------------


def _scan_regions(source: str, syntax: _Syntax) -> tuple[list[tuple[int, int, str]], list[str]]:
    """Comment/string regions as (start, end, kind) spans, plus diagnostics."""
    regions: list[tuple[int, int, str]] = []
    diagnostics: list[str] = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        matched = False
        for open_mark, close_mark in syntax.block_comments:
            if source.startswith(open_mark, i):
                end = source.find(close_mark, i + len(open_mark))
                if end == -1:
                    diagnostics.append(f"unterminated block comment at offset {i}")
                    end = n
                else:
                    end += len(close_mark)
                regions.append((i, end, "comment"))
                i = end
                matched = True
                break
        if matched:
            continue
        for mark in syntax.line_comments:
            if source.startswith(mark, i):
                end = source.find("\n", i)
                end = n if end == -1 else end
                regions.append((i, end, "comment"))
                i = end
                matched = True
                break
        if matched:
            continue
        for delim in syntax.string_delims:
            if source.startswith(delim, i):
                j = i + len(delim)
                while j < n:
                    if source[j] == "\\":
                        j += 2
                        continue
                    if source.startswith(delim, j):
                        j += len(delim)
                        break
                    # plain quotes do not span lines; triple quotes and backticks do
                    if source[j] == "\n" and len(delim) == 1 and delim != "`":
                        diagnostics.append(f"unterminated string at offset {i}")
                        break
                    j += 1
                else:
                    diagnostics.append(f"unterminated string at offset {i}")
                regions.append((i, min(j, n), "string"))
                i = min(j, n)
                matched = True
                break
        if not matched:
            i += 1
    return regions, diagnostics


def _region_kind(regions: list[tuple[int, int, str]], start: int) -> str | None:
    for r_start, r_end, kind in regions:
        if r_start <= start < r_end:
            return kind
    return None


# --- token classification --------------------------------------------------------


def _classify_tokens(
    source: str, tokens: Sequence[Token], language: Language
) -> tuple[list[str], list[str]]:
    syntax = _SYNTAX[language]
    mapping = node_kind_mapping(language)
    keywords = {k[3:] for k in mapping if k.startswith("kw_")}
    type_names = {k[3:] for k in mapping if k.startswith("ty_")}
    regions, diagnostics = _scan_regions(source, syntax)

    kinds: list[str] = []
    # paren depth of an open parameter list, None when not inside one
    param_depth: int | None = None
    prev_meaning: str | None = None  # last non-comment kind
    for i, token in enumerate(tokens):
        region = _region_kind(regions, token.start)
        if region == "comment":
            kinds.append("comment")
            continue
        if region == "string":
            kinds.append("string")
            kind = "string"
        elif _WORD_RE.fullmatch(token.text):
            if _NUMBER_RE.fullmatch(token.text):
                kind = "number"
            elif token.text in keywords:
                kind = f"kw_{token.text}"
            elif token.text in type_names:
                kind = f"ty_{token.text}"
            elif prev_meaning is not None and mapping.get(prev_meaning) is AstNodeType.FUNCTION_DEFINITION and prev_meaning.startswith("kw_"):
                kind = "def_name"
            elif prev_meaning is not None and mapping.get(prev_meaning) is AstNodeType.CLASS_DEFINITION and prev_meaning.startswith("kw_"):
                kind = "class_name"
            elif param_depth is not None:
                kind = "parameter"
            elif prev_meaning == "operator" and i > 0 and tokens[i - 1].text.endswith("."):
                kind = "field"
            elif i + 1 < len(tokens) and tokens[i + 1].text.startswith("("):
                kind = "call"
            else:
                kind = "identifier"
            kinds.append(kind)
        else:
            if token.text == "=":
                kind = "assign_op"
            elif any(c in _OPERATOR_CHARS for c in token.text):
                kind = "operator"
            else:
                kind = "delimiter"
            kinds.append(kind)
            # track the parameter list that follows a function definition name
            if kind in ("operator", "delimiter", "assign_op"):
                for ch in token.text:
                    if ch == "(":
                        if prev_meaning == "def_name" and param_depth is None:
                            param_depth = 1
                        elif param_depth is not None:
                            param_depth += 1
                    elif ch == ")" and param_depth is not None:
                        param_depth -= 1
                        if param_depth == 0:
                            param_depth = None
        prev_meaning = kind
    return kinds, diagnostics


def _build_lines(source: str, tokens: Sequence[Token]) -> tuple[LineInfo, ...]:
    n_lines = line_count(source)
    ranges: dict[int, tuple[int, int]] = {}
    for i, token in enumerate(tokens):
        line = token.line_index
        assert line is not None
        start, _ = ranges.get(line, (i, i))
        ranges[line] = (start, i + 1)
    return tuple(
        LineInfo(
            line_index=line,
            token_start=ranges.get(line, (0, 0))[0],
            token_end=ranges.get(line, (0, 0))[1],
            is_blank=line not in ranges,
        )
        for line in range(n_lines)
    )


def analyze(source: str, language: Language | str) -> AnalyzedCode:
    """Segment ``source`` into lines and tag tokens with coarse AST types.

    Never raises on byte-clean text: tagging problems degrade to the
    ``other`` type with a diagnostic.
    """
    if not source:
        raise ValueError("source is empty")
    language = Language.coerce(language)
    tokens = tuple(tokenize(source, with_lines=True))
    diagnostics: list[str] = []

    if language is Language.OTHER or language not in _SYNTAX:
        kinds = ["unknown"] * len(tokens)
        ast_types = [AstNodeType.OTHER] * len(tokens)
        if language is not Language.OTHER:
            diagnostics.append(f"no grammar for language {language.value}")
    else:
        try:
            kinds, diagnostics = _classify_tokens(source, tokens, language)
            mapping = node_kind_mapping(language)
            ast_types = [mapping.get(kind, AstNodeType.OTHER) for kind in kinds]
        except Exception as exc:  # tagger must be total
            kinds = ["unknown"] * len(tokens)
            ast_types = [AstNodeType.OTHER] * len(tokens)
            diagnostics = [f"tagger failed, all tokens typed other: {exc}"]

    return AnalyzedCode(
        source=source,
        language=language,
        tokens=tokens,
        node_kinds=tuple(kinds),
        ast_types=tuple(ast_types),
        lines=_build_lines(source, tokens),
        diagnostics=tuple(diagnostics),
    )


def line_embeddings(
    code: AnalyzedCode,
    response: EmbedResponse,
    highlights: np.ndarray,
    delta_highlight: float,
) -> list[LineEmbedding]:
    """Per-line mean vectors over all tokens, for lines that have tokens.

    A line is concept-bearing iff some token on it has a highlight
    probability strictly above ``delta_highlight``.
    """
    if len(response.tokens) != len(code.tokens):
        raise ValueError(
            f"embed response has {len(response.tokens)} tokens, analysis has {len(code.tokens)}"
        )
    highlights = np.asarray(highlights, dtype=np.float64)
    if highlights.shape != (len(code.tokens),):
        raise ValueError(
            f"highlights shape {highlights.shape} not parallel to {len(code.tokens)} tokens"
        )
    if not 0.0 < delta_highlight < 1.0:
        raise ValueError("delta_highlight must lie in (0, 1)")

    result: list[LineEmbedding] = []
    for line in code.lines:
        if line.is_blank:
            continue
        members = range(line.token_start, line.token_end)
        max_p = float(highlights[line.token_start : line.token_end].max())
        result.append(
            LineEmbedding(
                line_index=line.line_index,
                vector=span_embedding(response.embeddings, members),
                concept_bearing=max_p > delta_highlight,
                max_highlight=max_p,
            )
        )
    return result
