"""Shared deterministic number formatting for CSV and config emission."""

from __future__ import annotations


def format_float(x: float) -> str:
    """17-significant-digit formatting: round-trips doubles exactly and is
    byte-stable across runs and platforms."""
    return format(float(x), ".17g")
