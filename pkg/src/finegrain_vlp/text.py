"""Word segmentation shared by the tagger, the rewriter and the tokenizer.

Words are whitespace-delimited; leading and trailing punctuation is peeled off
into separate one-character words. Interior punctuation (hyphens,
apostrophes) stays inside the word.
"""

from __future__ import annotations

import re
import unicodedata
from functools import lru_cache
from typing import NamedTuple


class Word(NamedTuple):
    text: str
    start: int
    end: int


_TOKEN = re.compile(r"\S+")


@lru_cache(maxsize=8192)
def is_punct(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def split_words(text: str) -> list[Word]:
    words: list[Word] = []
    for m in _TOKEN.finditer(text):
        lo, hi = m.span()
        if text[lo:hi].isalnum():
            words.append(Word(text[lo:hi], lo, hi))
            continue
        while lo < hi and is_punct(text[lo]):
            words.append(Word(text[lo], lo, lo + 1))
            lo += 1
        tail = []
        while hi > lo and is_punct(text[hi - 1]):
            tail.append(Word(text[hi - 1], hi - 1, hi))
            hi -= 1
        if lo < hi:
            words.append(Word(text[lo:hi], lo, hi))
        words.extend(reversed(tail))
    return words


def replace_word(text: str, words: list[Word], index: int, surface: str) -> str:
    w = words[index]
    return text[: w.start] + surface + text[w.end :]
