"""Reader for the WordNet WNDB database format and the graph queries used by
sentence rewriting.

Only hypernym pointers (``@`` and ``@i``) become graph edges; hyponym edges are
synthesized as their exact inverse. Adjective ``&`` (similar-to) pointers are
kept separately because adjectives have no hypernym structure.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

from .errors import MissingFile, ParseError, UnknownSynset

__all__ = [
    "POS",
    "Relation",
    "SynsetId",
    "Synset",
    "WordNetGraph",
    "load_wordnet",
    "lookup_synsets",
    "related_synsets",
    "co_hyponym_candidates",
    "is_concrete",
    "compound_modifier_candidates",
    "default_wordnet_dir",
    "mini_wordnet_dir",
]


class POS(str, Enum):
    NOUN = "n"
    VERB = "v"
    ADJ = "a"
    ADV = "r"

    @property
    def filename(self) -> str:
        return {"n": "noun", "v": "verb", "a": "adj", "r": "adv"}[self.value]

    @classmethod
    def parse(cls, value: str) -> "POS":
        # satellite adjectives ("s") live in data.adj
        if value == "s":
            return cls.ADJ
        return cls(value)


class Relation(str, Enum):
    HYPERNYM = "hypernym"
    HYPONYM = "hyponym"


@dataclass(frozen=True, order=True)
class SynsetId:
    offset: int
    pos: POS

    def __str__(self) -> str:
        return f"{self.offset:08d}-{self.pos.value}"


@dataclass(frozen=True)
class Synset:
    id: SynsetId
    lemmas: tuple[str, ...]
    hypernyms: tuple[SynsetId, ...]
    hyponyms: tuple[SynsetId, ...]
    similar: tuple[SynsetId, ...] = ()
    satellite: bool = False
    gloss: str = ""

    @property
    def name(self) -> str:
        return self.lemmas[0]


_HYPERNYM_SYMBOLS = {"@", "@i"}
_ADJ_MARKER = re.compile(r"\([a-z]+\)$")


class WordNetGraph:
    """Immutable synset graph with a (lemma, pos) sense index."""

    def __init__(
        self,
        synsets: Mapping[SynsetId, Synset],
        lemma_index: Mapping[tuple[str, POS], tuple[SynsetId, ...]],
        version: str = "3.0",
    ):
        self._synsets = MappingProxyType(dict(synsets))
        self._lemma_index = MappingProxyType(dict(lemma_index))
        self.version = version
        self._lemmas_by_pos: dict[POS, tuple[str, ...]] = {}
        self._concrete_root: SynsetId | None = None
        self._memo: dict = {}
        roots = self._lemma_index.get(("physical_entity", POS.NOUN), ())
        if roots:
            self._concrete_root = roots[0]

    @property
    def synsets(self) -> Mapping[SynsetId, Synset]:
        return self._synsets

    @property
    def lemma_index(self) -> Mapping[tuple[str, POS], tuple[SynsetId, ...]]:
        return self._lemma_index

    def __len__(self) -> int:
        return len(self._synsets)

    def __contains__(self, sid: object) -> bool:
        return sid in self._synsets

    def __getitem__(self, sid: SynsetId) -> Synset:
        try:
            return self._synsets[sid]
        except KeyError:
            raise UnknownSynset(str(sid)) from None

    def count(self, pos: POS) -> int:
        return sum(1 for sid in self._synsets if sid.pos is pos)

    def has_lemma(self, lemma: str, pos: POS) -> bool:
        return (lemma, pos) in self._lemma_index

    def sense_count(self, lemma: str, pos: POS) -> int:
        return len(self._lemma_index.get((lemma, pos), ()))

    def lemmas(self, pos: POS) -> tuple[str, ...]:
        """Sorted single-word lemmas of one part of speech."""
        if pos not in self._lemmas_by_pos:
            self._lemmas_by_pos[pos] = tuple(
                sorted(lem for (lem, p) in self._lemma_index if p is pos and "_" not in lem)
            )
        return self._lemmas_by_pos[pos]

    @property
    def concrete_root(self) -> SynsetId | None:
        return self._concrete_root

    def structurally_equal(self, other: "WordNetGraph") -> bool:
        return (
            self.version == other.version
            and dict(self._synsets) == dict(other._synsets)
            and dict(self._lemma_index) == dict(other._lemma_index)
        )


def default_wordnet_dir() -> Path | None:
    """Locate a full WordNet 3.0 database: ``$WORDNET_DIR`` or the user cache."""
    env = os.environ.get("WORDNET_DIR")
    candidates = [Path(env)] if env else []
    candidates.append(Path.home() / ".cache" / "finegrain_vlp" / "wordnet-3.0")
    for path in candidates:
        if (path / "data.noun").is_file():
            return path
    return None


def mini_wordnet_dir() -> Path:
    """The WordNet 3.0 subset shipped for the toy world."""
    return Path(__file__).resolve().parent / "resources" / "wordnet-mini"


def _data_lines(path: Path):
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            # license header lines start with two spaces
            if line.startswith(" ") or not line.strip():
                continue
            yield lineno, line.rstrip("\n")


def _parse_data_line(fname: str, lineno: int, line: str, pos: POS):
    body, _, gloss = line.partition("|")
    fields = body.split()
    try:
        offset = int(fields[0])
        ss_type = fields[2]
        w_cnt = int(fields[3], 16)
        words = []
        i = 4
        for _ in range(w_cnt):
            word = _ADJ_MARKER.sub("", fields[i]).lower()
            words.append(word)
            i += 2
        p_cnt = int(fields[i])
        i += 1
        hypernyms = []
        similar = []
        for _ in range(p_cnt):
            symbol, target, tpos = fields[i], int(fields[i + 1]), POS.parse(fields[i + 2])
            if len(fields[i + 3]) != 4:
                raise ValueError(f"bad source/target field {fields[i + 3]!r}")
            i += 4
            if symbol in _HYPERNYM_SYMBOLS:
                hypernyms.append(SynsetId(target, tpos))
            elif symbol == "&":
                similar.append(SynsetId(target, tpos))
    except (IndexError, ValueError) as exc:
        raise ParseError(fname, lineno, str(exc)) from None
    if not words:
        raise ParseError(fname, lineno, "synset without lemmas")
    if POS.parse(ss_type) is not pos:
        raise ParseError(fname, lineno, f"ss_type {ss_type!r} does not belong in {fname}")
    # lemmas repeat in some synsets after lowercasing (e.g. "Roman"/"roman")
    lemmas = tuple(dict.fromkeys(words))
    return SynsetId(offset, pos), lemmas, hypernyms, similar, ss_type == "s", gloss.strip()


def _parse_index_line(fname: str, lineno: int, line: str, pos: POS):
    fields = line.split()
    try:
        lemma = fields[0]
        synset_cnt = int(fields[2])
        p_cnt = int(fields[3])
        rest = fields[4 + p_cnt + 2 :]
        if len(rest) != synset_cnt:
            raise ValueError(f"expected {synset_cnt} offsets, found {len(rest)}")
        offsets = [int(x) for x in rest]
    except (IndexError, ValueError) as exc:
        raise ParseError(fname, lineno, str(exc)) from None
    return lemma, tuple(SynsetId(o, pos) for o in offsets)


def load_wordnet(path: str | os.PathLike, version: str = "3.0") -> WordNetGraph:
    """Parse ``index.{pos}`` and ``data.{pos}`` files from *path*."""
    root = Path(path)
    for pos in POS:
        for prefix in ("index", "data"):
            name = f"{prefix}.{pos.filename}"
            if not (root / name).is_file():
                raise MissingFile(name)

    raw: dict[SynsetId, tuple] = {}
    for pos in POS:
        fname = f"data.{pos.filename}"
        for lineno, line in _data_lines(root / fname):
            sid, lemmas, hypers, similar, sat, gloss = _parse_data_line(fname, lineno, line, pos)
            if sid in raw:
                raise ParseError(fname, lineno, f"duplicate synset offset {sid.offset}")
            raw[sid] = (lemmas, hypers, similar, sat, gloss, fname, lineno)

    hyponyms: dict[SynsetId, list[SynsetId]] = {sid: [] for sid in raw}
    for sid, (_, hypers, similar, _, _, fname, lineno) in raw.items():
        for target in list(hypers) + list(similar):
            if target not in raw:
                raise ParseError(fname, lineno, f"pointer to unknown synset {target}")
        for target in hypers:
            hyponyms[target].append(sid)

    synsets = {
        sid: Synset(
            id=sid,
            lemmas=lemmas,
            hypernyms=tuple(dict.fromkeys(hypers)),
            hyponyms=tuple(dict.fromkeys(hyponyms[sid])),
            similar=tuple(dict.fromkeys(similar)),
            satellite=sat,
            gloss=gloss,
        )
        for sid, (lemmas, hypers, similar, sat, gloss, _, _) in raw.items()
    }

    lemma_index: dict[tuple[str, POS], tuple[SynsetId, ...]] = {}
    for pos in POS:
        fname = f"index.{pos.filename}"
        for lineno, line in _data_lines(root / fname):
            lemma, ids = _parse_index_line(fname, lineno, line, pos)
            for sid in ids:
                if sid not in synsets:
                    raise ParseError(fname, lineno, f"index entry {lemma!r} points to unknown synset {sid}")
            lemma_index[(lemma, pos)] = ids
    return WordNetGraph(synsets, lemma_index, version=version)


def lookup_synsets(graph: WordNetGraph, lemma: str, pos: POS) -> list[SynsetId]:
    return list(graph.lemma_index.get((lemma, pos), ()))


def related_synsets(graph: WordNetGraph, sid: SynsetId, relation: Relation) -> list[SynsetId]:
    synset = graph[sid]
    if Relation(relation) is Relation.HYPERNYM:
        return list(synset.hypernyms)
    return list(synset.hyponyms)


def _steps(graph: WordNetGraph, start: Iterable[SynsetId], relation: Relation, n: int) -> list[SynsetId]:
    """Synsets reachable by exactly *n* steps, in first-encountered order."""
    frontier = list(start)
    for _ in range(n):
        nxt: dict[SynsetId, None] = {}
        for sid in frontier:
            for other in related_synsets(graph, sid, relation):
                nxt.setdefault(other)
        frontier = list(nxt)
    return frontier


def same_word(a: str, b: str) -> bool:
    """True for identical lemmas or trivial morphological variants of each other."""
    a, b = a.lower().replace("-", ""), b.lower().replace("-", "")
    if a == b:
        return True
    for x, y in ((a, b), (b, a)):
        if y in (x + "s", x + "es") or (x.endswith("y") and y == x[:-1] + "ies"):
            return True
    return False


def _adjective_cluster(graph: WordNetGraph, sid: SynsetId) -> list[SynsetId]:
    synset = graph[sid]
    heads = synset.similar if synset.satellite else (sid,)
    out: dict[SynsetId, None] = {}
    for head in heads:
        out.setdefault(head)
        for sat in graph[head].similar:
            out.setdefault(sat)
    return list(out)


def co_hyponym_candidates(graph: WordNetGraph, lemma: str, pos: POS, order: int) -> list[str]:
    """Single-word lemmas that share a hypernym (``order`` 1) or a grandparent
    reached through two hyponym steps (``order`` 2) with some sense of *lemma*.

    Adjectives use their similar-to cluster as the order-1 neighborhood and
    have no order-2 neighborhood.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    key = ("cohypo", lemma, pos, order)
    if key not in graph._memo:
        graph._memo[key] = tuple(_co_hyponyms(graph, lemma, POS(pos), order))
    return list(graph._memo[key])


def _co_hyponyms(graph: WordNetGraph, lemma: str, pos: POS, order: int) -> list[str]:
    senses = lookup_synsets(graph, lemma, pos)
    if not senses:
        return []
    own = set(senses)
    if pos is POS.ADJ:
        if order == 2:
            return []
        pool = [sid for sense in senses for sid in _adjective_cluster(graph, sense)]
    else:
        pool = []
        for sense in senses:
            ancestors = _steps(graph, [sense], Relation.HYPERNYM, order)
            pool.extend(_steps(graph, ancestors, Relation.HYPONYM, order))
    out: dict[str, None] = {}
    for sid in pool:
        if sid in own:
            continue
        for cand in graph[sid].lemmas:
            if "_" in cand or same_word(cand, lemma):
                continue
            out.setdefault(cand)
    return list(out)


def ancestors(graph: WordNetGraph, sid: SynsetId) -> set[SynsetId]:
    seen: set[SynsetId] = set()
    stack = [sid]
    while stack:
        cur = stack.pop()
        for parent in graph[cur].hypernyms:
            if parent not in seen:
                seen.add(parent)
                stack.append(parent)
    return seen


def is_concrete(graph: WordNetGraph, lemma: str) -> bool:
    """Some noun sense of *lemma* descends from the physical-entity root."""
    root = graph.concrete_root
    if root is None:
        return False
    key = ("concrete", lemma)
    if key not in graph._memo:
        graph._memo[key] = any(
            sense == root or root in ancestors(graph, sense)
            for sense in lookup_synsets(graph, lemma, POS.NOUN)
        )
    return graph._memo[key]


def compound_modifier_candidates(graph: WordNetGraph, modifier: str, head: str, order: int = 1) -> list[str]:
    """Modifiers *m* such that the noun compound ``m_head`` is a co-hyponym of
    ``modifier_head`` ("roman numeral" -> "arabic numeral")."""
    compound = f"{modifier}_{head}"
    if not graph.has_lemma(compound, POS.NOUN):
        return []
    own = set(lookup_synsets(graph, compound, POS.NOUN))
    out: dict[str, None] = {}
    for sense in own:
        ups = _steps(graph, [sense], Relation.HYPERNYM, order)
        for sid in _steps(graph, ups, Relation.HYPONYM, order):
            if sid in own:
                continue
            for lem in graph[sid].lemmas:
                parts = lem.split("_")
                if len(parts) == 2 and parts[1] == head and not same_word(parts[0], modifier):
                    out.setdefault(parts[0])
    return list(out)
