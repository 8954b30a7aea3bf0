"""Checklist distillation and evaluation toolkit for generated clinical notes.

Turns free-text user feedback into binary (yes/no) checklist questions,
refines them (dedup, tagging, enforceability tests, coverage/diversity
subset selection), and evaluates the result: robustness to note
perturbations, predictive power for user ratings, and agreement with
human preference pairs. Everything runs offline against a deterministic
mock LLM backend.
"""

__version__ = "0.1.0"
