"""Adaptive white-box attacks against the full defense."""

from .adaptive import AttackResult, bpda_eot_attack, pgd_eot_attack, run_attack
from .projection import AttackSpec

__all__ = ["AttackResult", "AttackSpec", "bpda_eot_attack", "pgd_eot_attack", "run_attack"]
