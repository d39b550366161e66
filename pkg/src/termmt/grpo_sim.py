"""Desk-scale GRPO: a categorical policy over a fixed candidate pool per source.

Each step samples a group of candidates per pool, scores them with the real
reward stack, normalizes rewards within the group and takes one
score-function gradient step on the logits.
"""
from __future__ import annotations

import json
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .reward import RewardBreakdown, RewardWeights, combined_reward, group_advantages
from .terminology import TermMappingSet
from .util import iter_jsonl


@dataclass(frozen=True)
class CandidatePool:
    source: str
    reference: str
    mappings: TermMappingSet
    candidates: tuple[str, ...]

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError("a pool needs at least 2 candidates")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("pool candidates must be distinct")

    @classmethod
    def from_record(cls, rec: dict) -> CandidatePool:
        return cls(
            rec["source"],
            rec["reference"],
            TermMappingSet.from_records(rec.get("mappings", [])),
            tuple(rec["candidates"]),
        )

    def to_record(self) -> dict:
        return {
            "source": self.source,
            "reference": self.reference,
            "mappings": self.mappings.to_records(),
            "candidates": list(self.candidates),
        }


def read_pools(lines: Iterable[str]) -> list[CandidatePool]:
    pools = []
    for lineno, rec in iter_jsonl(lines):
        try:
            pools.append(CandidatePool.from_record(rec))
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return pools


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = logits / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


@dataclass
class Policy:
    logits: list[np.ndarray]
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def probs(self, i: int) -> np.ndarray:
        return softmax(self.logits[i], self.temperature)

    def entropy(self, i: int) -> float:
        p = self.probs(i)
        return float(-(p * np.log(p)).sum())

    def argmax(self, i: int) -> int:
        return int(np.argmax(self.logits[i]))

    def copy(self) -> Policy:
        return Policy([l.copy() for l in self.logits], self.temperature)

    def to_record(self) -> dict:
        return {"temperature": self.temperature, "logits": [l.tolist() for l in self.logits]}


def init_policy(pools: Sequence[CandidatePool]) -> Policy:
    if not pools:
        raise ValueError("no pools")
    return Policy([np.zeros(len(p.candidates)) for p in pools])


def score_pools(pools: Sequence[CandidatePool], weights: RewardWeights) -> list[list[RewardBreakdown]]:
    """Rewards are deterministic per candidate, so they are computed once up front."""
    return [[combined_reward(c, p.reference, p.mappings, weights) for c in p.candidates] for p in pools]


@dataclass(frozen=True)
class StepStats:
    mean_reward: float
    mean_r_term: float
    mean_r_bleu: float
    entropy: float


@dataclass
class TrainTrace:
    steps: list[StepStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    def to_tsv(self) -> str:
        lines = ["step\tmean_reward\tmean_r_term\tmean_r_bleu\tentropy"]
        for i, s in enumerate(self.steps):
            lines.append(f"{i}\t{s.mean_reward!r}\t{s.mean_r_term!r}\t{s.mean_r_bleu!r}\t{s.entropy!r}")
        return "\n".join(lines) + "\n"


def pool_update(
    logits: np.ndarray,
    temperature: float,
    samples: np.ndarray,
    advantages: Sequence[float],
    learning_rate: float,
) -> np.ndarray:
    """Logit delta lr * sum_i A_i * d log p(c_i) / d logits / G."""
    p = softmax(logits, temperature)
    adv = np.asarray(advantages, dtype=float)
    grad = np.bincount(samples, weights=adv, minlength=len(logits)) - adv.sum() * p
    return learning_rate * grad / (len(samples) * temperature)


def grpo_step(
    policy: Policy,
    pools: Sequence[CandidatePool],
    group_size: int = 16,
    weights: RewardWeights = RewardWeights(),
    learning_rate: float = 0.5,
    seed: int = 0,
    step: int = 0,
    l2: float = 0.0,
    rewards: list[list[RewardBreakdown]] | None = None,
) -> tuple[Policy, StepStats]:
    """One update over every pool. The RNG for pool ``i`` is seeded by (seed, i, step)."""
    if group_size < 2:
        raise ValueError("group too small")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if rewards is None:
        rewards = score_pools(pools, weights)
    new_logits = []
    tot_r = tot_term = tot_bleu = tot_ent = 0.0
    for i, _pool in enumerate(pools):
        logits = policy.logits[i]
        rng = np.random.default_rng([seed, i, step])
        samples = rng.choice(len(logits), size=group_size, p=policy.probs(i))
        scored = [rewards[i][j] for j in samples]
        group = group_advantages([b.combined for b in scored])
        delta = pool_update(logits, policy.temperature, samples, group.advantages, learning_rate)
        if l2:
            delta -= learning_rate * l2 * logits
        new_logits.append(logits + delta)
        tot_r += group.mean
        tot_term += sum(b.r_term for b in scored) / group_size
        tot_bleu += sum(b.r_bleu for b in scored) / group_size
        tot_ent += policy.entropy(i)
    n = len(pools)
    stats = StepStats(tot_r / n, tot_term / n, tot_bleu / n, tot_ent / n)
    return Policy(new_logits, policy.temperature), stats


def train(
    policy: Policy,
    pools: Sequence[CandidatePool],
    steps: int,
    group_size: int = 16,
    weights: RewardWeights = RewardWeights(),
    learning_rate: float = 0.5,
    seed: int = 0,
    l2: float = 0.0,
) -> tuple[Policy, TrainTrace]:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rewards = score_pools(pools, weights)
    trace = TrainTrace()
    for t in range(steps):
        policy, stats = grpo_step(policy, pools, group_size, weights, learning_rate, seed, t, l2, rewards)
        trace.steps.append(stats)
    return policy, trace


def write_policy(policy: Policy) -> str:
    return json.dumps(policy.to_record()) + "\n"
