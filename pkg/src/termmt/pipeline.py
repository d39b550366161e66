"""Parallel-corpus similarity filtering and SFT/GRPO split sampling."""
from __future__ import annotations

import hashlib
import logging
import os
import random
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Protocol

import httpx

from .terminology import iter_tsv_pairs
from .text_norm import normalize, tokenize
from .util import iter_jsonl

log = logging.getLogger(__name__)

SCORER_URL_ENV = "TERMMT_SCORER_URL"


@dataclass(frozen=True)
class SentencePair:
    source: str
    target: str
    pair_id: str = ""
    similarity: float | None = None

    def __post_init__(self):
        if not normalize(self.source) or not normalize(self.target):
            raise ValueError("both sides of a sentence pair must be non-empty")
        if not self.pair_id:
            object.__setattr__(self, "pair_id", pair_id_for(self.source, self.target))

    def to_record(self) -> dict:
        rec = {"pair_id": self.pair_id, "source": self.source, "target": self.target}
        if self.similarity is not None:
            rec["similarity"] = self.similarity
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> SentencePair:
        return cls(rec["source"], rec["target"], rec.get("pair_id", ""), rec.get("similarity"))


def pair_id_for(source: str, target: str) -> str:
    """Content hash, so ids do not depend on file order."""
    return hashlib.sha1(f"{source}\t{target}".encode()).hexdigest()[:16]


def read_pairs(lines: Iterable[str]) -> list[SentencePair]:
    """Read TSV (source<TAB>target) or JSONL pair records; the first non-blank line decides."""
    lines = list(lines)
    first = next((l for l in lines if l.strip()), "")
    if first.lstrip().startswith("{"):
        return [SentencePair.from_record(rec) for _, rec in iter_jsonl(lines)]
    return [SentencePair(s, t) for _, s, t in iter_tsv_pairs(lines)]


class SimilarityScorer(Protocol):
    def score(self, source: str, target: str) -> float: ...


class LexicalScorer:
    """Dice coefficient over lowercased 13a token sets.

    An offline stand-in only; it is not equivalent to a multilingual sentence
    embedding model and scores real translation pairs much lower.
    """

    def score(self, source: str, target: str) -> float:
        a = {t.lower() for t in tokenize(source).tokens}
        b = {t.lower() for t in tokenize(target).tokens}
        if not a and not b:
            return 0.0
        return 2 * len(a & b) / (len(a) + len(b))


class HttpScorer:
    """Client for an external embedding-similarity endpoint.

    POST ``{"pairs": [{"source": ..., "target": ...}, ...]}`` and expect
    ``{"scores": [float, ...]}`` in the same order.
    """

    def __init__(self, url: str | None = None, batch_size: int = 64, timeout: float = 60.0, client=None):
        self.url = url or os.environ.get(SCORER_URL_ENV)
        if not self.url:
            raise ValueError(f"no scorer endpoint (pass a URL or set {SCORER_URL_ENV})")
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=timeout)

    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]:
        body = {"pairs": [{"source": s, "target": t} for s, t in pairs]}
        resp = self._client.post(self.url, json=body)
        resp.raise_for_status()
        scores = resp.json()["scores"]
        if len(scores) != len(pairs):
            raise ValueError(f"scorer returned {len(scores)} scores for {len(pairs)} pairs")
        return [float(s) for s in scores]

    def score(self, source: str, target: str) -> float:
        return self.score_batch([(source, target)])[0]


@dataclass
class FilterResult:
    kept: list[SentencePair]
    discarded: int
    errors: int


def _score_all(pairs: Sequence[SentencePair], scorer, max_workers: int) -> list[float | None]:
    if hasattr(scorer, "score_batch"):
        size = getattr(scorer, "batch_size", 64)
        chunks = [pairs[i : i + size] for i in range(0, len(pairs), size)]

        def run(chunk):
            try:
                return scorer.score_batch([(p.source, p.target) for p in chunk])
            except Exception as e:  # noqa: BLE001 - scorer failures are counted, not fatal
                log.warning("scorer batch failed: %s", e)
                return [None] * len(chunk)

        with ThreadPoolExecutor(max_workers) as ex:
            return [s for chunk_scores in ex.map(run, chunks) for s in chunk_scores]

    def one(p):
        try:
            return scorer.score(p.source, p.target)
        except Exception as e:  # noqa: BLE001
            log.warning("scorer failed on %s: %s", p.pair_id, e)
            return None

    with ThreadPoolExecutor(max_workers) as ex:
        return list(ex.map(one, pairs))


def filter_pairs(
    pairs: Sequence[SentencePair], scorer, threshold: float = 0.9, max_workers: int = 4
) -> FilterResult:
    """Keep pairs scoring at or above ``threshold`` (only scores below it are dropped)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    kept, discarded, errors = [], 0, 0
    for pair, score in zip(pairs, _score_all(pairs, scorer, max_workers)):
        if score is None:
            errors += 1
        elif score >= threshold:
            kept.append(replace(pair, similarity=score))
        else:
            discarded += 1
    return FilterResult(kept, discarded, errors)


def sample_split(
    pairs: Sequence[SentencePair], n_sft: int = 10_000, n_grpo: int = 1_000, seed: int = 0
) -> tuple[list[SentencePair], list[SentencePair]]:
    """Disjoint uniform samples without replacement, independent of input order."""
    need = n_sft + n_grpo
    if n_sft < 0 or n_grpo < 0:
        raise ValueError("split sizes must be non-negative")
    if len(pairs) < need:
        raise ValueError(f"need {need} pairs, got {len(pairs)} (short by {need - len(pairs)})")
    ordered = sorted(pairs, key=lambda p: (p.pair_id, p.source, p.target))
    chosen = random.Random(seed).sample(ordered, need)
    return chosen[:n_sft], chosen[n_sft:]
