"""Synthetic micro-world: scenes of colored object groups and their captions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SHAPES = ("dog", "cat", "horse", "bird", "car", "boat", "ball", "cup")
PLURALS = {s: s + "s" for s in SHAPES}
COLORS = ("red", "blue", "green", "yellow", "white")
COUNT_WORDS = ("one", "two", "three")
MAX_GROUPS = 3
N_SYMBOLS = len(SHAPES) * len(COLORS) * len(COUNT_WORDS)


def symbol_id(shape: int, color: int, count: int) -> int:
    """Visual token id for a group of *count* (1-3) objects."""
    return (shape * len(COLORS) + color) * len(COUNT_WORDS) + (count - 1)


def decode_symbol(sym: int) -> tuple[int, int, int]:
    rest, count = divmod(sym, len(COUNT_WORDS))
    shape, color = divmod(rest, len(COLORS))
    return shape, color, count + 1


@dataclass(frozen=True)
class ToyScene:
    groups: tuple[tuple[int, int, int], ...]  # (shape, color, count), caption order
    caption: str
    visual_tokens: tuple[int, ...]

    @property
    def key(self) -> tuple:
        return tuple(sorted(self.groups))


def caption_for(groups) -> str:
    phrases = []
    for shape, color, count in groups:
        noun = SHAPES[shape] if count == 1 else PLURALS[SHAPES[shape]]
        phrases.append(f"{COUNT_WORDS[count - 1]} {COLORS[color]} {noun}")
    return " and ".join(phrases)


def world_words() -> list[str]:
    """Every word a clean caption can contain."""
    return list(COUNT_WORDS) + list(COLORS) + list(SHAPES) + [PLURALS[s] for s in SHAPES] + ["and"]


def _sample_scene(rng: np.random.Generator) -> ToyScene:
    n_groups = int(rng.integers(1, MAX_GROUPS + 1))
    shapes = rng.choice(len(SHAPES), size=n_groups, replace=False)
    groups = tuple(
        (int(s), int(rng.integers(len(COLORS))), int(rng.integers(1, len(COUNT_WORDS) + 1))) for s in shapes
    )
    visual = [symbol_id(*g) for g in groups]
    rng.shuffle(visual)
    return ToyScene(groups, caption_for(groups), tuple(int(v) for v in visual))


def noisy_caption(caption: str, rate: float, rng: np.random.Generator) -> str:
    """Drop each word independently with probability *rate* (at least one word kept)."""
    if rate <= 0:
        return caption
    words = caption.split()
    keep = rng.random(len(words)) >= rate
    if not keep.any():
        keep[rng.integers(len(words))] = True
    return " ".join(w for w, k in zip(words, keep) if k)


def generate_toy_corpus(seed: int, n_train: int, n_eval: int) -> tuple[list[ToyScene], list[ToyScene]]:
    """Disjoint train/eval scene lists; every scene (and so every caption) is unique."""
    if n_train < 1 or n_eval < 1:
        raise ValueError("n_train and n_eval must be >= 1")
    rng = np.random.default_rng(seed)
    seen: set = set()
    scenes: list[ToyScene] = []
    attempts = 0
    while len(scenes) < n_train + n_eval:
        attempts += 1
        if attempts > 100 * (n_train + n_eval) + 10_000:
            raise ValueError("cannot draw that many distinct scenes")
        scene = _sample_scene(rng)
        if scene.key in seen:
            continue
        seen.add(scene.key)
        scenes.append(scene)
    return scenes[n_eval:], scenes[:n_eval]


def build_toy_vocab(graph, quantifiers=None) -> list[str]:
    """Token list for the micro-world: specials, caption words, quantifiers,
    one-step substitutes of every caption word, inflection pieces, and a
    character fallback so that any lowercase word tokenizes without [UNK]."""
    from ..linguistics import default_closed_class, default_quantifiers, tag_word
    from ..tokenizer import SPECIAL_TOKENS
    from ..wordnet import co_hyponym_candidates

    quant = default_quantifiers() if quantifiers is None else quantifiers
    closed = default_closed_class()
    tokens: dict[str, None] = dict.fromkeys(SPECIAL_TOKENS)
    for word in world_words():
        tokens.setdefault(word)
    for q in quant:
        tokens.setdefault(q)
    for word in world_words():
        tag, lemma = tag_word(word, graph, quant, closed)
        if tag.wordnet_pos is not None:
            for cand in co_hyponym_candidates(graph, lemma, tag.wordnet_pos, 1):
                if all(c.isalpha() for c in cand):
                    tokens.setdefault(cand)
    for piece in ("##s", "##es", "##ies", "##ing", "##ed", "##d"):
        tokens.setdefault(piece)
    for ch in "abcdefghijklmnopqrstuvwxyz0123456789":
        tokens.setdefault(ch)
        tokens.setdefault("##" + ch)
    for ch in "-'.,!?;:\"()":
        tokens.setdefault(ch)
    return list(tokens)


def toy_vocab_path():
    from pathlib import Path

    return Path(__file__).resolve().parents[1] / "resources" / "toy_vocab.txt"


def default_toy_vocab():
    from ..tokenizer import load_vocab

    return load_vocab(toy_vocab_path())
