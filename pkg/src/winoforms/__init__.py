"""Ablation harness for Winograd-schema task formalizations."""

__version__ = "0.1.0"
