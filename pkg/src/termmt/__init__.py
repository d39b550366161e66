"""Terminology-constrained MT tooling: annotation, instruction data, rewards, GRPO, evaluation."""

__version__ = "0.1.0"
