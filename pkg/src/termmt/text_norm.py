"""Text normalization and mteval-v13a tokenization.

Tokenization only ever inserts spaces into the normalized text, so every
token is a verbatim substring of it and can be located by character offsets.
"""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field

_ENTITIES = (("&quot;", '"'), ("&amp;", "&"), ("&lt;", "<"), ("&gt;", ">"))

# ASCII symbol classes padded by mteval-v13a (everything but ' - . , and alphanumerics)
_PUNCT = re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])")
# period/comma unless a digit sits on both sides
_PERIOD_COMMA = re.compile(r"(?<![0-9])([.,])|([.,])(?![0-9])")
_DIGIT_DASH = re.compile(r"(?<=[0-9])-")


@dataclass(frozen=True)
class TokenizedSentence:
    raw: str
    tokens: tuple[str, ...]
    char_spans: tuple[tuple[int, int], ...] = field(repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)


def normalize(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    text = text.replace("<skipped>", "")
    if "&" in text:
        for entity, char in _ENTITIES:
            text = text.replace(entity, char)
    text = text.replace("\r\n", " ").replace("\n", " ")
    return " ".join(text.split())


def _pad(text: str) -> str:
    text = _PUNCT.sub(r" \1 ", text)
    text = _PERIOD_COMMA.sub(lambda m: f" {m.group(0)} ", text)
    return _DIGIT_DASH.sub(" - ", text)


def tokenize_13a(text: str) -> TokenizedSentence:
    """Tokenize already-normalized text with the 13a rules.

    Offsets in ``char_spans`` index into ``text`` itself.
    """
    tokens = tuple(_pad(text).split())
    spans = []
    cursor = 0
    for tok in tokens:
        start = text.index(tok, cursor)
        end = start + len(tok)
        spans.append((start, end))
        cursor = end
    return TokenizedSentence(raw=text, tokens=tokens, char_spans=tuple(spans))


def tokenize(text: str) -> TokenizedSentence:
    """Normalize then tokenize."""
    return tokenize_13a(normalize(text))
