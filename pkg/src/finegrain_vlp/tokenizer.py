"""WordPiece tokenization, MLM masking and replaced-token targets."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DuplicateToken,
    EmptyInput,
    MissingFile,
    MissingSpecialToken,
    SpanOutOfRange,
    SpanTruncated,
)
from .text import is_punct, split_words

__all__ = [
    "SPECIAL_TOKENS",
    "IGNORE_INDEX",
    "MAX_LEN",
    "Vocab",
    "TokenSeq",
    "MaskedSeq",
    "RlmTarget",
    "load_vocab",
    "wordpiece",
    "tokenize",
    "detokenize",
    "normalize_text",
    "apply_mlm_mask",
    "rlm_target",
]

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
IGNORE_INDEX = -100
MAX_LEN = 30

# corruption codes recorded per position by apply_mlm_mask
KEEP_UNMASKED, CORRUPT_MASK, CORRUPT_RANDOM, CORRUPT_KEEP = 0, 1, 2, 3


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    token_to_id: dict = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        tokens = tuple(tokens)
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise DuplicateToken(f"token {tok!r} repeated at lines {index[tok] + 1} and {i + 1}")
            index[tok] = i
        for special in SPECIAL_TOKENS:
            if special not in index:
                raise MissingSpecialToken(special)
        return cls(tokens, index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return self.tokens

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    pad_id = property(lambda self: self.token_to_id[PAD])
    unk_id = property(lambda self: self.token_to_id[UNK])
    cls_id = property(lambda self: self.token_to_id[CLS])
    sep_id = property(lambda self: self.token_to_id[SEP])
    mask_id = property(lambda self: self.token_to_id[MASK])

    @cached_property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.token_to_id[t] for t in SPECIAL_TOKENS)

    @cached_property
    def non_special_ids(self) -> np.ndarray:
        special = self.special_ids
        return np.array([i for i in range(len(self.tokens)) if i not in special], dtype=np.int64)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")


def load_vocab(path) -> Vocab:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    # a trailing newline is not a token; interior blank lines would shift ids
    while lines and lines[-1] == "":
        lines.pop()
    return Vocab.from_tokens(line.strip() for line in lines)


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    tokens: tuple[str, ...]
    word_spans: dict  # word_index -> (start, end), end exclusive

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class MaskedSeq:
    ids: tuple[int, ...]
    mlm_labels: tuple[int, ...]
    forced_position: int | None
    corruption: tuple[int, ...] = ()

    @property
    def masked_positions(self) -> list[int]:
        return [i for i, lab in enumerate(self.mlm_labels) if lab != IGNORE_INDEX]


@dataclass(frozen=True)
class RlmTarget:
    position: int
    length: int


def wordpiece(word: str, vocab: Vocab, max_chars: int = 100) -> list[str]:
    """Greedy longest-match-first segmentation; unmatched words become [UNK]."""
    if len(word) > max_chars:
        return [UNK]
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            if sub in vocab:
                piece = sub
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


def _split_interior(word: str) -> list[str]:
    if word.isalnum():
        return [word]
    out, buf = [], []
    for ch in word:
        if is_punct(ch):
            if buf:
                out.append("".join(buf))
                buf = []
            out.append(ch)
        else:
            buf.append(ch)
    if buf:
        out.append("".join(buf))
    return out


def normalize_text(text: str) -> str:
    """Lowercased text with every punctuation character as its own word."""
    return " ".join(part for w in split_words(text.lower()) for part in _split_interior(w.text))


def tokenize(text: str, vocab: Vocab, max_len: int = MAX_LEN) -> TokenSeq:
    if not text or not text.strip():
        raise EmptyInput("empty text")
    if max_len < 3:
        raise ValueError("max_len must leave room for [CLS], [SEP] and one token")
    budget = max_len - 2
    tokens = [CLS]
    spans = {}
    for wi, word in enumerate(split_words(text.lower())):
        pieces = [p for part in _split_interior(word.text) for p in wordpiece(part, vocab)]
        room = budget - (len(tokens) - 1)
        if room <= 0:
            break
        pieces = pieces[:room]
        spans[wi] = (len(tokens), len(tokens) + len(pieces))
        tokens.extend(pieces)
    tokens.append(SEP)
    return TokenSeq(tuple(vocab.id(t) for t in tokens), tuple(tokens), spans)


def detokenize(seq: TokenSeq) -> str:
    words: list[str] = []
    for tok in seq.tokens:
        if tok in (CLS, SEP, PAD):
            continue
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)


def apply_mlm_mask(
    seq: TokenSeq,
    forced_span: tuple[int, int] | None,
    vocab: Vocab,
    seed: int,
    rate: float = 0.15,
    mask_prob: float = 0.8,
    random_prob: float = 0.1,
) -> MaskedSeq:
    """Select each non-special token with probability *rate*, plus every
    position of *forced_span*; corrupt selections as [MASK] / random / kept."""
    n = len(seq.ids)
    special = vocab.special_ids
    if forced_span is not None:
        start, end = forced_span
        if not (1 <= start < end <= n - 1):
            raise SpanOutOfRange(f"span {forced_span} outside token range [1, {n - 1})")
        if any(seq.ids[i] in (vocab.cls_id, vocab.sep_id, vocab.pad_id) for i in range(start, end)):
            raise SpanOutOfRange(f"span {forced_span} covers special tokens")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)))
    eligible = np.array([t not in special for t in seq.ids])
    eligible[0] = eligible[-1] = False
    draws = rng.random(n)
    selected = eligible & (draws < rate)
    if forced_span is not None:
        selected[forced_span[0] : forced_span[1]] = True
    kinds = rng.random(n)
    randoms = rng.choice(vocab.non_special_ids, size=n)
    ids = list(seq.ids)
    labels = [IGNORE_INDEX] * n
    corruption = [KEEP_UNMASKED] * n
    for i in np.flatnonzero(selected):
        labels[i] = seq.ids[i]
        if kinds[i] < mask_prob:
            ids[i] = vocab.mask_id
            corruption[i] = CORRUPT_MASK
        elif kinds[i] < mask_prob + random_prob:
            ids[i] = int(randoms[i])
            corruption[i] = CORRUPT_RANDOM
        else:
            corruption[i] = CORRUPT_KEEP
    forced = forced_span[0] if forced_span is not None else None
    return MaskedSeq(tuple(ids), tuple(labels), forced, tuple(corruption))


def rlm_target(seq: TokenSeq, replaced_word_index: int, length: int = MAX_LEN) -> RlmTarget:
    """One-hot target at the first sub-token of the replaced word."""
    span = seq.word_spans.get(replaced_word_index)
    if span is None:
        raise SpanTruncated(f"word {replaced_word_index} has no surviving span")
    return RlmTarget(position=span[0], length=max(length, len(seq.ids)))
