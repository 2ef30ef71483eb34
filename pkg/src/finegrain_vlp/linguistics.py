"""Rule-based part-of-speech tagging and lemmatization over WordNet."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import EmptyInput, MissingFile
from .text import is_punct, split_words
from .wordnet import POS, WordNetGraph, co_hyponym_candidates, is_concrete

__all__ = [
    "PosTag",
    "TaggedWord",
    "Lexicon",
    "QuantifierLexicon",
    "load_lexicon",
    "default_quantifiers",
    "default_closed_class",
    "tag_sentence",
    "lemmatize",
    "select_rewrite_candidates",
    "has_substitutes",
]


class PosTag(str, Enum):
    NOUN = "Noun"
    VERB = "Verb"
    ADJ = "Adj"
    QUANTIFIER = "Quantifier"
    OTHER = "Other"

    @property
    def wordnet_pos(self) -> POS | None:
        return _WN_POS.get(self)


_WN_POS = {PosTag.NOUN: POS.NOUN, PosTag.VERB: POS.VERB, PosTag.ADJ: POS.ADJ}
CONTENT_TAGS = frozenset({PosTag.NOUN, PosTag.VERB, PosTag.ADJ, PosTag.QUANTIFIER})


@dataclass(frozen=True)
class TaggedWord:
    surface: str
    lemma: str
    tag: PosTag
    word_index: int


class Lexicon(tuple):
    """Ordered, lowercase, deduplicated word list."""

    def __new__(cls, words=()):
        return super().__new__(cls, dict.fromkeys(w.strip().lower() for w in words if w.strip()))

    def __contains__(self, word) -> bool:
        return super().__contains__(word.lower()) if isinstance(word, str) else False


class QuantifierLexicon(Lexicon):
    pass


def load_lexicon(path, cls=Lexicon):
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    return cls(line for line in lines if line.strip() and not line.lstrip().startswith("#"))


def _resource_lexicon(name, cls):
    text = resources.files("finegrain_vlp.resources").joinpath(name).read_text(encoding="utf-8")
    return cls(line for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#"))


@lru_cache(maxsize=None)
def default_quantifiers() -> QuantifierLexicon:
    return _resource_lexicon("quantifiers.txt", QuantifierLexicon)


@lru_cache(maxsize=None)
def default_closed_class() -> Lexicon:
    return _resource_lexicon("closed_class.txt", Lexicon)


# WordNet morphological detachment rules (suffix, replacement)
_DETACH = {
    POS.NOUN: [("s", ""), ("ses", "s"), ("xes", "x"), ("zes", "z"), ("ches", "ch"),
               ("shes", "sh"), ("men", "man"), ("ies", "y")],
    POS.VERB: [("s", ""), ("ies", "y"), ("es", "e"), ("es", ""), ("ed", "e"),
               ("ed", ""), ("ing", "e"), ("ing", ""), ("ying", "ie")],
    POS.ADJ: [("er", ""), ("est", ""), ("er", "e"), ("est", "e")],
}
_VOWELS = set("aeiou")


def _detachments(word: str, pos: POS) -> list[str]:
    out = []
    for suffix, repl in _DETACH.get(pos, ()):
        if word.endswith(suffix) and len(word) > len(suffix):
            stem = word[: -len(suffix)]
            out.append(stem + repl)
            # undo consonant doubling: running -> runn -> run
            if not repl and len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in _VOWELS:
                out.append(stem[:-1])
    return out


def lemmatize(surface: str, pos: PosTag | POS, graph: WordNetGraph) -> str:
    """Base form of *surface* for *pos*, or the lowercased surface when no
    candidate form is in the graph."""
    word = surface.lower()
    wn_pos = pos.wordnet_pos if isinstance(pos, PosTag) else pos
    if wn_pos is None:
        return word
    if graph.has_lemma(word, wn_pos):
        return word
    for cand in _detachments(word, wn_pos):
        if graph.has_lemma(cand, wn_pos):
            return cand
    return word


def _wordnet_tag(word: str, graph: WordNetGraph) -> tuple[PosTag, str] | None:
    best = None
    for tag in (PosTag.NOUN, PosTag.VERB, PosTag.ADJ):
        lemma = lemmatize(word, tag, graph)
        n = graph.sense_count(lemma, tag.wordnet_pos)
        # strict > keeps the Noun > Verb > Adj tie order
        if n and (best is None or n > best[0]):
            best = (n, tag, lemma)
    return None if best is None else (best[1], best[2])


def _suffix_tag(word: str) -> PosTag:
    if word.endswith(("ing", "ed")):
        return PosTag.VERB
    if word.endswith(("ous", "ful", "ish")):
        return PosTag.ADJ
    return PosTag.OTHER


def tag_word(word: str, graph: WordNetGraph, quant: Lexicon, closed: Lexicon) -> tuple[PosTag, str]:
    low = word.lower()
    if low in quant:
        return PosTag.QUANTIFIER, low
    if low in closed or all(is_punct(c) for c in low) or any(c.isdigit() for c in low):
        return PosTag.OTHER, low
    hit = _wordnet_tag(low, graph)
    if hit is not None:
        return hit
    return _suffix_tag(low), low


def tag_sentence(
    text: str,
    graph: WordNetGraph,
    quant: Lexicon | None = None,
    closed: Lexicon | None = None,
) -> list[TaggedWord]:
    if not text or not text.strip():
        raise EmptyInput("empty sentence")
    quant = default_quantifiers() if quant is None else quant
    closed = default_closed_class() if closed is None else closed
    tagged = []
    for i, w in enumerate(split_words(text)):
        tag, lemma = tag_word(w.text, graph, quant, closed)
        tagged.append(TaggedWord(w.text, lemma, tag, i))
    return tagged


def has_substitutes(word: TaggedWord, graph: WordNetGraph, quant: Lexicon | None = None) -> bool:
    if word.tag is PosTag.QUANTIFIER:
        quant = default_quantifiers() if quant is None else quant
        return len(quant) >= 2
    pos = word.tag.wordnet_pos
    if pos is None:
        return False
    if pos is POS.NOUN and not is_concrete(graph, word.lemma):
        return False
    return bool(co_hyponym_candidates(graph, word.lemma, pos, 1) or co_hyponym_candidates(graph, word.lemma, pos, 2))


def select_rewrite_candidates(
    words: list[TaggedWord], graph: WordNetGraph, quant: Lexicon | None = None
) -> list[int]:
    return [w.word_index for w in words if w.tag in CONTENT_TAGS and has_substitutes(w, graph, quant)]
