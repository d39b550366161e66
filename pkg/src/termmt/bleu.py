"""Sentence-level BLEU with exponential smoothing and the normalized BLEU reward."""
from __future__ import annotations

import math
import sys
from collections import Counter
from dataclasses import dataclass

from .text_norm import TokenizedSentence, tokenize


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def sentence_bleu(
    hypothesis: TokenizedSentence, reference: TokenizedSentence, max_order: int = 4
) -> BleuScore:
    """BLEU of one hypothesis against one reference.

    Zero-count orders get precision 1 / (2**k * total_n), k counting the zero
    orders seen so far. Only orders up to ``hyp_len`` enter the geometric mean.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    hyp, ref = hypothesis.tokens, reference.tokens
    if not ref:
        raise ValueError("empty reference")
    hyp_len, ref_len = len(hyp), len(ref)

    if hyp_len == 0:
        # exp(1 - ref_len/eps) underflows; keep the penalty strictly positive
        return BleuScore(0.0, (0.0,) * max_order, sys.float_info.min, 0, ref_len)

    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    precisions = [0.0] * max_order
    eff_order = min(max_order, hyp_len)
    smooth = 1.0
    for n in range(1, eff_order + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        correct = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = hyp_len - n + 1
        if correct == 0:
            smooth *= 2.0
            precisions[n - 1] = 1.0 / (smooth * total)
        else:
            precisions[n - 1] = correct / total

    log_mean = sum(math.log(p) for p in precisions[:eff_order]) / eff_order
    score = bp * math.exp(log_mean) * 100.0
    return BleuScore(min(score, 100.0), tuple(precisions), bp, hyp_len, ref_len)


def r_bleu(hypothesis: str, reference: str) -> float:
    """Sentence BLEU of raw strings scaled to [0, 1]."""
    return sentence_bleu(tokenize(hypothesis), tokenize(reference)).score / 100.0
