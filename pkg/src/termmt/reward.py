"""Per-completion rewards (BLEU + terminology adherence) and group-relative advantages."""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

from .bleu import r_bleu
from .instruction_gen import parse_mappings
from .terminology import TermMappingSet, matched_flags

__all__ = [
    "RewardWeights",
    "RewardBreakdown",
    "GroupRewards",
    "parse_mappings",
    "r_term",
    "combined_reward",
    "group_advantages",
]


@dataclass(frozen=True)
class RewardWeights:
    w_bleu: float = 0.5
    w_term: float = 0.5

    def __post_init__(self):
        if self.w_bleu < 0 or self.w_term < 0 or not self.w_bleu + self.w_term > 0:
            raise ValueError("weights must be non-negative with a positive sum")

    def combine(self, bleu: float, term: float) -> float:
        return (self.w_bleu * bleu + self.w_term * term) / (self.w_bleu + self.w_term)


@dataclass(frozen=True)
class RewardBreakdown:
    r_bleu: float
    r_term: float
    combined: float
    matched_terms: tuple[bool, ...]

    def to_record(self) -> dict:
        return {
            "r_bleu": self.r_bleu,
            "r_term": self.r_term,
            "combined": self.combined,
            "matched_terms": list(self.matched_terms),
        }


@dataclass(frozen=True)
class GroupRewards:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    mean: float
    std: float


def _r_term(flags: Sequence[bool]) -> float:
    # no constraints in the prompt: nothing to violate
    return sum(flags) / len(flags) if flags else 1.0


def r_term(hypothesis: str, mappings: TermMappingSet) -> float:
    return _r_term(matched_flags(hypothesis, mappings))


def combined_reward(
    hypothesis: str,
    reference: str | None,
    mappings: TermMappingSet,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Weighted mean of the BLEU and terminology rewards.

    ``reference`` may be None only when ``weights.w_bleu == 0``; r_bleu is then 0.
    """
    if reference is None:
        if weights.w_bleu > 0:
            raise ValueError("reference required when w_bleu > 0")
        bleu = 0.0
    else:
        bleu = r_bleu(hypothesis, reference)
    flags = tuple(matched_flags(hypothesis, mappings))
    term = _r_term(flags)
    return RewardBreakdown(bleu, term, weights.combine(bleu, term), flags)


def group_advantages(rewards: Sequence[float], epsilon: float = 1e-8) -> GroupRewards:
    """(r - mean) / (population std + epsilon) within one group of completions."""
    g = len(rewards)
    if g < 2:
        raise ValueError("group too small")
    rewards = tuple(float(r) for r in rewards)
    mean = math.fsum(rewards) / g
    if max(rewards) == min(rewards):
        return GroupRewards(rewards, (0.0,) * g, rewards[0], 0.0)
    centered = [r - mean for r in rewards]
    std = math.sqrt(math.fsum(c * c for c in centered) / g)
    if std == 0.0:
        # spread below float resolution (variance underflow)
        return GroupRewards(rewards, (0.0,) * g, mean, 0.0)
    return GroupRewards(rewards, tuple(c / (std + epsilon) for c in centered), mean, std)
