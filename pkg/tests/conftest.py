import textwrap
from pathlib import Path

import pytest

from finegrain_vlp.tokenizer import Vocab
from finegrain_vlp.toymodel.corpus import default_toy_vocab
from finegrain_vlp.wordnet import default_wordnet_dir, load_wordnet, mini_wordnet_dir

LICENSE = "  1 This software and database is being provided to you, the LICENSEE, by\n  2 Princeton University under the following license.\n"

# 12 synsets: a small noun taxonomy, one abstract branch, two verbs
FIXTURE_DATA = {
    "noun": """\
        00000001 03 n 01 entity 0 002 ~ 00000002 n 0000 ~ 00000009 n 0000 | that which exists
        00000002 03 n 02 physical_entity 0 thing 0 002 @ 00000001 n 0000 ~ 00000003 n 0000 | a physical thing
        00000003 03 n 01 object 0 002 @ 00000002 n 0000 ~ 00000004 n 0000 | a tangible thing
        00000004 05 n 02 animal 0 beast 0 001 @ 00000003 n 0000 | a living organism
        00000005 05 n 01 canine 0 001 @ 00000004 n 0000 | dog-like mammal
        00000006 05 n 02 dog 0 domestic_dog 0 001 @ 00000005 n 0000 | a domestic canine
        00000007 05 n 01 wolf 0 001 @ 00000005 n 0000 | a wild canine
        00000008 05 n 02 fox 0 Reynard 0 001 @i 00000005 n 0000 | a named fox
        00000009 03 n 01 abstraction 0 001 @ 00000001 n 0000 | a general concept
        00000010 09 n 01 idea 0 001 @ 00000009 n 0000 | a thought
    """,
    "verb": """\
        00000011 38 v 01 move 0 000 | change location
        00000012 38 v 02 run 0 scamper 0 001 @ 00000011 v 0000 | move fast
    """,
    "adj": "",
    "adv": "",
}

FIXTURE_INDEX = {
    "noun": """\
        abstraction n 1 1 @ 1 0 00000009
        animal n 1 1 @ 1 0 00000004
        beast n 1 1 @ 1 0 00000004
        canine n 1 1 @ 1 0 00000005
        dog n 1 1 @ 1 0 00000006
        domestic_dog n 1 1 @ 1 0 00000006
        entity n 1 1 ~ 1 0 00000001
        fox n 1 1 @ 1 0 00000008
        idea n 1 1 @ 1 0 00000010
        object n 1 1 @ 1 0 00000003
        physical_entity n 1 1 @ 1 0 00000002
        reynard n 1 1 @ 1 0 00000008
        thing n 1 1 @ 1 0 00000002
        wolf n 1 1 @ 1 0 00000007
    """,
    "verb": """\
        move v 1 0 1 0 00000011
        run v 1 1 @ 1 0 00000012
        scamper v 1 1 @ 1 0 00000012
    """,
    "adj": "",
    "adv": "",
}


def write_fixture_db(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for pos in ("noun", "verb", "adj", "adv"):
        (root / f"data.{pos}").write_text(LICENSE + textwrap.dedent(FIXTURE_DATA[pos]), encoding="utf-8")
        (root / f"index.{pos}").write_text(LICENSE + textwrap.dedent(FIXTURE_INDEX[pos]), encoding="utf-8")
    return root


@pytest.fixture
def fixture_db(tmp_path) -> Path:
    return write_fixture_db(tmp_path / "wn")


@pytest.fixture
def fixture_graph(fixture_db):
    return load_wordnet(fixture_db)


@pytest.fixture(scope="session")
def mini_graph():
    return load_wordnet(mini_wordnet_dir())


@pytest.fixture(scope="session")
def full_graph():
    path = default_wordnet_dir()
    if path is None:
        pytest.skip("full WordNet 3.0 not installed (set WORDNET_DIR)")
    return load_wordnet(path)


@pytest.fixture(scope="session")
def toy_vocab():
    return default_toy_vocab()


# 20 lines, ids 0..19
SMALL_VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "play", "##ing", "##ed", "un", "##play", "##able", "the", "dog", "##s", "run", "a", ".", ",", "-", "cat",
]


@pytest.fixture(scope="session")
def small_vocab() -> Vocab:
    return Vocab.from_tokens(SMALL_VOCAB)
