"""Token counting for budget accounting.

The default counter is the model-agnostic ``ceil(chars / 4)`` heuristic. A
tiktoken-backed counter can be selected through the configuration when exact
BPE counts matter.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable

TokenCounter = Callable[[str], int]

CHARS_PER_TOKEN = 4


def count_tokens(text: str) -> int:
    """Heuristic token count: ``ceil(len(text) / 4)``; ``""`` counts as 0."""
    if not text:
        return 0
    return math.ceil(len(text) / CHARS_PER_TOKEN)


@lru_cache(maxsize=1)
def _cl100k():
    import tiktoken

    # cl100k_base approximates most chat model tokenizers
    return tiktoken.get_encoding("cl100k_base")


def tiktoken_counter(text: str) -> int:
    if not text:
        return 0
    return len(_cl100k().encode(text, disallowed_special=()))


_COUNTERS = {
    "chars4": count_tokens,
    "tiktoken": tiktoken_counter,
}


def get_token_counter(name: str = "chars4") -> TokenCounter:
    try:
        return _COUNTERS[name]
    except KeyError:
        raise ValueError(f"unknown token counter: {name} (expected one of {sorted(_COUNTERS)})")
