"""Single-word negative caption rewriting over the WordNet graph.

One content word is chosen at random and replaced by a co-hyponym (a lemma
sharing a hypernym with it), falling back to two-step hypernym/hyponym
neighborhoods when the one-step neighborhood is empty. Quantifiers are
replaced from the quantifier lexicon.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable, Iterator

import numpy as np

from .errors import EmptyInput, NoCandidate
from .linguistics import (
    CONTENT_TAGS,
    Lexicon,
    PosTag,
    TaggedWord,
    default_closed_class,
    default_quantifiers,
    has_substitutes,
    tag_word,
)
from .text import replace_word, split_words
from .wordnet import WordNetGraph, co_hyponym_candidates, same_word

__all__ = [
    "SearchOrder",
    "RewriteResult",
    "rewrite_sentence",
    "realize_surface",
    "derive_seed",
    "rewrite_records",
]

U64 = (1 << 64) - 1


class SearchOrder(str, Enum):
    FIRST = "First"
    SECOND = "Second"
    QUANTIFIER = "QuantifierLexicon"
    RANDOM = "Random"


@dataclass(frozen=True)
class RewriteResult:
    original_words: tuple[str, ...]
    rewritten_words: tuple[str, ...]
    replaced_index: int
    original_lemma: str
    substitute_lemma: str
    substitute_surface: str
    search_order: SearchOrder
    seed: int
    tag: PosTag
    original_text: str = ""
    rewritten_text: str = ""

    def to_record(self) -> dict:
        d = asdict(self)
        d["search_order"] = self.search_order.value
        d["tag"] = self.tag.value
        return d


def derive_seed(seed: int, *keys: int) -> int:
    """Counter-based child seed for (seed, keys...); independent of call order."""
    ss = np.random.SeedSequence(entropy=int(seed) & U64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & U64)))


_SIBILANT = ("s", "x", "z", "ch", "sh")


def _cvc(word: str) -> bool:
    # short consonant-vowel-consonant stems double their final consonant
    v = "aeiou"
    return (
        len(word) >= 3
        and word[-1] not in v + "wxy"
        and word[-2] in v
        and word[-3] not in v
        and sum(c in v for c in word) == 1
    )


def _plural(word: str) -> str:
    if word.endswith("y") and len(word) > 1 and word[-2] not in "aeiou":
        return word[:-1] + "ies"
    if word.endswith(_SIBILANT):
        return word + "es"
    return word + "s"


def _ing(word: str) -> str:
    if word.endswith("ie"):
        return word[:-2] + "ying"
    if word.endswith("e") and not word.endswith(("ee", "ye", "oe")) and len(word) > 2:
        return word[:-1] + "ing"
    if _cvc(word):
        return word + word[-1] + "ing"
    return word + "ing"


def _ed(word: str) -> str:
    if word.endswith("e"):
        return word + "d"
    if word.endswith("y") and len(word) > 1 and word[-2] not in "aeiou":
        return word[:-1] + "ied"
    if _cvc(word):
        return word + word[-1] + "ed"
    return word + "ed"


def _copy_case(surface: str, word: str) -> str:
    if surface[:1].isupper():
        return word[:1].upper() + word[1:]
    return word


def realize_surface(
    substitute_lemma: str,
    original_surface: str,
    tag: PosTag,
    original_lemma: str | None = None,
) -> str:
    """Carry simple inflection and capitalization from the original word over to
    the substitute. Irregular forms are approximated by suffix transfer."""
    sub = substitute_lemma.lower().replace("_", " ")
    low = original_surface.lower()
    inflected = original_lemma is None or original_lemma.lower() != low
    out = sub
    if inflected and tag is PosTag.NOUN:
        if low.endswith("s") and not low.endswith("ss"):
            out = _plural(sub)
    elif inflected and tag is PosTag.VERB:
        if low.endswith("ing"):
            out = _ing(sub)
        elif low.endswith("ed"):
            out = _ed(sub)
        elif low.endswith("s") and not low.endswith("ss"):
            out = _plural(sub)
    return _copy_case(original_surface, out)


def _substitute(word: TaggedWord, graph, quant, rng, mode) -> tuple[str, SearchOrder] | None:
    if word.tag is PosTag.QUANTIFIER:
        pool = [q for q in quant if not same_word(q, word.lemma)]
        if not pool:
            return None
        return pool[rng.integers(len(pool))], SearchOrder.QUANTIFIER
    pos = word.tag.wordnet_pos
    if mode == "random":
        lemmas = graph.lemmas(pos)
        # rejection sampling is uniform over the same pool without scanning it
        for _ in range(64):
            if not lemmas:
                break
            lem = lemmas[rng.integers(len(lemmas))]
            if not same_word(lem, word.lemma):
                return lem, SearchOrder.RANDOM
        pool = [lem for lem in lemmas if not same_word(lem, word.lemma)]
        if not pool:
            return None
        return pool[rng.integers(len(pool))], SearchOrder.RANDOM
    for order, label in ((1, SearchOrder.FIRST), (2, SearchOrder.SECOND)):
        pool = co_hyponym_candidates(graph, word.lemma, pos, order)
        if pool:
            return pool[rng.integers(len(pool))], label
    return None


def rewrite_sentence(
    text: str,
    graph: WordNetGraph,
    quant: Lexicon | None = None,
    seed: int = 0,
    *,
    closed: Lexicon | None = None,
    mode: str = "wordnet",
) -> RewriteResult:
    """Replace one randomly chosen content word of *text*.

    ``mode="random"`` draws the substitute uniformly from all single-word
    lemmas of the same part of speech instead of from co-hyponyms.

    Raises NoCandidate when no word admits a substitution.
    """
    if not text or not text.strip():
        raise EmptyInput("empty sentence")
    if mode not in ("wordnet", "random"):
        raise ValueError(f"unknown rewrite mode {mode!r}")
    quant = default_quantifiers() if quant is None else quant
    closed = default_closed_class() if closed is None else closed
    words = split_words(text)
    tagged = []
    for i, w in enumerate(words):
        tag, lemma = tag_word(w.text, graph, quant, closed)
        tagged.append(TaggedWord(w.text, lemma, tag, i))

    rng = _rng(seed)
    if mode == "random":
        eligible = [t for t in tagged if t.tag in CONTENT_TAGS]
    else:
        eligible = [t for t in tagged if t.tag in CONTENT_TAGS and has_substitutes(t, graph, quant)]
    if not eligible:
        raise NoCandidate(text)
    for k in rng.permutation(len(eligible)):
        word = eligible[k]
        found = _substitute(word, graph, quant, rng, mode)
        if found is None:
            continue
        lemma, order = found
        surface = realize_surface(lemma, word.surface, word.tag, word.lemma)
        original = tuple(w.text for w in words)
        rewritten = list(original)
        rewritten[word.word_index] = surface
        return RewriteResult(
            original_words=original,
            rewritten_words=tuple(rewritten),
            replaced_index=word.word_index,
            original_lemma=word.lemma,
            substitute_lemma=lemma,
            substitute_surface=surface,
            search_order=order,
            seed=int(seed),
            tag=word.tag,
            original_text=text,
            rewritten_text=replace_word(text, words, word.word_index, surface),
        )
    raise NoCandidate(text)


def rewrite_records(
    records: Iterable[dict],
    graph: WordNetGraph,
    quant: Lexicon | None = None,
    seed: int = 0,
    *,
    k: int = 1,
    mode: str = "wordnet",
    closed: Lexicon | None = None,
    ordinal_offset: int = 0,
) -> Iterator[dict]:
    """JSONL batch rewriting. Each caption gets seeds derived from
    (seed, ordinal, rewrite number), so output is order-independent.
    Captions without candidates yield a record with ``"error": "NoCandidate"``.
    ``ordinal_offset`` numbers a stream slice as part of a longer stream."""
    quant = default_quantifiers() if quant is None else quant
    closed = default_closed_class() if closed is None else closed
    for ordinal, rec in enumerate(records, ordinal_offset):
        for j in range(k):
            child = derive_seed(seed, ordinal, j)
            out = {"id": rec.get("id"), "caption": rec["caption"]}
            try:
                res = rewrite_sentence(rec["caption"], graph, quant, child, closed=closed, mode=mode)
            except NoCandidate:
                out.update(rewritten=None, replaced_index=None, substitute=None,
                           search_order=None, seed=child, error="NoCandidate")
            else:
                out.update(
                    rewritten=res.rewritten_text,
                    replaced_index=res.replaced_index,
                    substitute=res.substitute_lemma,
                    search_order=res.search_order.value,
                    seed=child,
                )
            yield out
