"""Prompt text resources, kept as editable files next to this module."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load(name: str) -> str:
    """Text of a prompt resource, stripped of trailing whitespace."""
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8").rstrip()
