"""Bilingual term dictionaries, constraint annotation and strict term matching."""
from __future__ import annotations

import logging
import random
import unicodedata
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

from .text_norm import normalize, tokenize

log = logging.getLogger(__name__)

MAX_TERM_TOKENS = 5
ARROW = "→"
ASCII_ARROW = "->"
ITEM_SEPARATOR = ", "


class DictionaryFormatError(ValueError):
    pass


def term_is_renderable(term: str) -> bool:
    """Terms must survive the ``src → tgt, ...`` mapping-list grammar."""
    return bool(term) and term == term.strip() and ARROW not in term and ASCII_ARROW not in term \
        and ITEM_SEPARATOR not in term and "\n" not in term


@dataclass(frozen=True)
class TermMapping:
    source_term: str
    target_term: str
    # token offsets [start, end) in the tokenized source sentence
    source_span: tuple[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.source_term or not self.target_term:
            raise ValueError("term mapping sides must be non-empty")

    @property
    def key(self) -> tuple[str, str]:
        return (self.source_term, self.target_term)


class TermMappingSet(Sequence):
    """Ordered constraint set, deduplicated on (source_term, target_term)."""

    def __init__(self, mappings: Iterable[TermMapping] = ()):
        seen = set()
        items = []
        for m in mappings:
            if m.key not in seen:
                seen.add(m.key)
                items.append(m)
        self._items = tuple(items)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str]]) -> TermMappingSet:
        return cls(TermMapping(s, t) for s, t in pairs)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other) -> bool:
        if isinstance(other, TermMappingSet):
            return self.pairs() == other.pairs()
        return NotImplemented

    def __hash__(self):
        return hash(self.pairs())

    def __repr__(self) -> str:
        return f"TermMappingSet({list(self.pairs())!r})"

    def pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple(m.key for m in self._items)

    @property
    def targets(self) -> list[str]:
        return [m.target_term for m in self._items]

    def to_records(self) -> list[dict]:
        out = []
        for m in self._items:
            rec = {"source": m.source_term, "target": m.target_term}
            if m.source_span is not None:
                rec["span"] = list(m.source_span)
            out.append(rec)
        return out

    @classmethod
    def from_records(cls, records: Iterable) -> TermMappingSet:
        items = []
        for rec in records:
            if isinstance(rec, dict):
                span = rec.get("span")
                items.append(TermMapping(rec["source"], rec["target"], tuple(span) if span else None))
            else:
                src, tgt = rec
                items.append(TermMapping(src, tgt))
        return cls(items)


@dataclass(frozen=True)
class DictEntry:
    source: str
    target: str
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]


@dataclass
class Dictionary:
    source_lang: str
    target_lang: str
    # casefolded source token tuple -> entries, in file order
    entries: dict[tuple[str, ...], list[DictEntry]] = field(default_factory=dict)
    skipped: int = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def add(self, source: str, target: str) -> bool:
        src_tok = tokenize(source).tokens
        tgt_tok = tokenize(target).tokens
        if not (1 <= len(src_tok) <= MAX_TERM_TOKENS and 1 <= len(tgt_tok) <= MAX_TERM_TOKENS):
            return False
        source, target = normalize(source), normalize(target)
        if not (term_is_renderable(source) and term_is_renderable(target)):
            return False
        entry = DictEntry(source, target, src_tok, tgt_tok)
        bucket = self.entries.setdefault(_fold(src_tok), [])
        if all((e.source, e.target) != (source, target) for e in bucket):
            bucket.append(entry)
        return True

    def lookup(self, tokens: Sequence[str], case_insensitive: bool = True) -> list[DictEntry]:
        bucket = self.entries.get(_fold(tokens), [])
        if case_insensitive:
            return bucket
        return [e for e in bucket if e.source_tokens == tuple(tokens)]

    @property
    def max_source_len(self) -> int:
        return max((len(k) for k in self.entries), default=0)


def _fold(tokens: Iterable[str]) -> tuple[str, ...]:
    return tuple(t.casefold() for t in tokens)


def load_dictionary(lines: Iterable[str], source_lang: str, target_lang: str) -> Dictionary:
    """Read ``source<TAB>target`` lines. Over-long or unrenderable terms are skipped and counted."""
    d = Dictionary(source_lang, target_lang)
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
            raise DictionaryFormatError(f"line {lineno}: expected 2 non-empty tab-separated fields")
        if not d.add(fields[0], fields[1]):
            d.skipped += 1
    if d.skipped:
        log.warning("skipped %d dictionary entries (over %d tokens or unrenderable)", d.skipped, MAX_TERM_TOKENS)
    return d


def read_dictionary(path, source_lang: str = "en", target_lang: str = "xx") -> Dictionary:
    with open(path, encoding="utf-8") as f:
        return load_dictionary(f, source_lang, target_lang)


def _find_subsequence(haystack: Sequence[str], needle: Sequence[str]) -> int:
    n = len(needle)
    for i in range(len(haystack) - n + 1):
        if tuple(haystack[i : i + n]) == tuple(needle):
            return i
    return -1


def _surface(tok, start: int, end: int) -> str:
    return tok.raw[tok.char_spans[start][0] : tok.char_spans[end - 1][1]]


def _realized_in(entry: DictEntry, reference: str, ref_tok, case_insensitive: bool) -> bool:
    hay = _fold(ref_tok.tokens) if case_insensitive else ref_tok.tokens
    needle = _fold(entry.target_tokens) if case_insensitive else entry.target_tokens
    # the reward checks raw substrings, so the emitted target must be one as well
    return _find_subsequence(hay, needle) >= 0 and strict_match(reference, entry.target)


def match_terms(
    source: str,
    dictionary: Dictionary,
    reference: str | None = None,
    case_insensitive: bool = True,
) -> TermMappingSet:
    """Greedy longest-match-first, left-to-right dictionary annotation.

    Spans are chosen without looking at the reference; a reference only
    filters out mappings whose target term it does not contain.
    """
    src = tokenize(source)
    ref_tok = tokenize(reference) if reference is not None else None
    longest = min(dictionary.max_source_len, MAX_TERM_TOKENS)
    mappings = []
    i = 0
    while i < len(src.tokens):
        step = 1
        for n in range(min(longest, len(src.tokens) - i), 0, -1):
            entries = dictionary.lookup(src.tokens[i : i + n], case_insensitive)
            if entries:
                entry = entries[0]
                surface = _surface(src, i, i + n)
                keep = term_is_renderable(surface) and (
                    ref_tok is None or _realized_in(entry, reference, ref_tok, case_insensitive)
                )
                if keep:
                    mappings.append(TermMapping(surface, entry.target, (i, i + n)))
                step = n
                break
        i += step
    return TermMappingSet(mappings)


def inline_annotate(source: str, mappings: TermMappingSet, mode: str = "append") -> str:
    """Insert each target term right after its source occurrence (``mode="append"``)."""
    if mode == "none":
        return source
    if mode != "append":
        raise ValueError(f"unknown inline mode {mode!r}")
    if not mappings:
        return source
    tok = tokenize(source)
    inserts = []
    for m in mappings:
        if m.source_span is None:
            raise ValueError("unanchored mapping")
        start, end = m.source_span
        if not (0 <= start < end <= len(tok.tokens)):
            raise ValueError(f"mapping span {m.source_span} outside source")
        inserts.append((tok.char_spans[end - 1][1], m.target_term))
    text = tok.raw
    for pos, target in sorted(inserts, reverse=True):
        text = f"{text[:pos]} {target}{text[pos:]}"
    return text


def draw_random_terms(source: str, dictionary: Dictionary, k: int, seed: int) -> TermMappingSet:
    """Pick up to ``k`` distinct dictionary-covered words of ``source`` at random."""
    if k < 0:
        raise ValueError("k must be >= 0")
    src = tokenize(source)
    first_pos: dict[str, int] = {}
    for i, t in enumerate(src.tokens):
        if t in first_pos or not any(c.isalpha() for c in t) or not term_is_renderable(t):
            continue
        if dictionary.lookup((t,)):
            first_pos[t] = i
    chosen = random.Random(seed).sample(list(first_pos), min(k, len(first_pos)))
    chosen.sort(key=first_pos.__getitem__)
    return TermMappingSet(
        TermMapping(t, dictionary.lookup((t,))[0].target, (first_pos[t], first_pos[t] + 1)) for t in chosen
    )


def strict_match(hypothesis: str, target_term: str) -> bool:
    if not target_term:
        raise ValueError("empty target term")
    return unicodedata.normalize("NFC", target_term) in unicodedata.normalize("NFC", hypothesis)


def matched_flags(hypothesis: str, mappings: TermMappingSet) -> list[bool]:
    return [strict_match(hypothesis, m.target_term) for m in mappings]


def term_accuracy(records: Iterable[tuple[str, TermMappingSet]]) -> float:
    """Micro-averaged strict-match accuracy over all target terms."""
    matched = total = 0
    for hyp, mappings in records:
        flags = matched_flags(hyp, mappings)
        matched += sum(flags)
        total += len(flags)
    if total == 0:
        raise ValueError("no terms to score")
    return matched / total


def iter_tsv_pairs(lines: Iterable[str]) -> Iterator[tuple[int, str, str]]:
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise DictionaryFormatError(f"line {lineno}: expected 2 tab-separated fields")
        yield lineno, fields[0], fields[1]
