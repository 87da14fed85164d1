"""Whitespace/punctuation tokenizer shared by embedding providers and code analysis.

Runs of word characters (letters, digits, underscore) form one token, so
identifiers stay whole; runs of any other non-space characters form one
token.  Offsets are unicode scalar positions, end-exclusive, so
``source[start:end] == text`` always holds.  Tokens of code text carry a
0-based physical line index; query tokens carry none.
"""

from __future__ import annotations

import re
from bisect import bisect_right

from conceptsearch.model import Token

_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


def line_starts(text: str) -> list[int]:
    """Offsets at which each physical line of ``text`` begins."""
    starts = [0]
    for i, ch in enumerate(text):
        if ch == "\n":
            starts.append(i + 1)
    return starts


def line_count(text: str) -> int:
    return len(line_starts(text))


def tokenize(text: str, *, with_lines: bool = False) -> list[Token]:
    """Split ``text`` into tokens with character offsets.

    With ``with_lines`` each token is assigned the 0-based index of the
    physical line containing its first character (used for code).
    """
    starts = line_starts(text) if with_lines else None
    tokens: list[Token] = []
    for m in _TOKEN_RE.finditer(text):
        line = bisect_right(starts, m.start()) - 1 if starts is not None else None
        tokens.append(Token(text=m.group(), start=m.start(), end=m.end(), line_index=line))
    return tokens
