"""Cut the WordNet 3.0 subset shipped with the package.

The subset keeps, for every toy-world caption word, all senses in every part
of speech, their one-step rewrite neighborhoods, and the full hypernym
ancestry of everything kept. Synset offsets are those of WordNet 3.0.

    python scripts/build_mini_wordnet.py [--wordnet DIR] [--out DIR]
"""

import argparse
from pathlib import Path

from finegrain_vlp.linguistics import default_closed_class, default_quantifiers, tag_word
from finegrain_vlp.toymodel.corpus import world_words
from finegrain_vlp.linguistics import _detachments
from finegrain_vlp.wordnet import POS, Relation, ancestors, default_wordnet_dir, load_wordnet, lookup_synsets, _adjective_cluster, _steps

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "finegrain_vlp" / "resources" / "wordnet-mini"


def select(graph):
    quant, closed = default_quantifiers(), default_closed_class()
    keep = set()
    for word in world_words():
        for pos in (POS.NOUN, POS.VERB, POS.ADJ):
            for form in [word] + _detachments(word, pos):
                keep.update(lookup_synsets(graph, form, pos))
        tag, lemma = tag_word(word, graph, quant, closed)
        pos = tag.wordnet_pos
        if pos is None:
            continue
        for sense in lookup_synsets(graph, lemma, pos):
            if pos is POS.ADJ:
                keep.update(_adjective_cluster(graph, sense))
            else:
                keep.update(_steps(graph, _steps(graph, [sense], Relation.HYPERNYM, 1), Relation.HYPONYM, 1))
    for sid in list(keep):
        keep |= ancestors(graph, sid)
    return keep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wordnet", type=Path, default=default_wordnet_dir())
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args()
    graph = load_wordnet(args.wordnet)
    keep = select(graph)
    args.out.mkdir(parents=True, exist_ok=True)
    header = [line for line in open(args.wordnet / "data.noun", encoding="utf-8") if line.startswith("  ")]
    for pos in POS:
        lines = []
        for sid in sorted(s for s in keep if s.pos is pos):
            syn = graph[sid]
            ptrs = [("@", h) for h in syn.hypernyms if h in keep] + [("&", s) for s in syn.similar if s in keep]
            ss_type = "s" if syn.satellite else pos.value
            words = " ".join(f"{lem} 0" for lem in syn.lemmas)
            ptr_text = " ".join(f"{sym} {t.offset:08d} {t.pos.value} 0000" for sym, t in ptrs)
            lines.append(
                f"{sid.offset:08d} 00 {ss_type} {len(syn.lemmas):02x} {words} {len(ptrs):03d} {ptr_text} | {syn.gloss}".replace("  ", " ")
            )
        (args.out / f"data.{pos.filename}").write_text("".join(header) + "\n".join(lines) + "\n", encoding="utf-8")
        index = []
        lemmas = sorted({lem for sid in keep if sid.pos is pos for lem in graph[sid].lemmas})
        for lem in lemmas:
            senses = [s for s in lookup_synsets(graph, lem, pos) if s in keep]
            if senses:
                offs = " ".join(f"{s.offset:08d}" for s in senses)
                index.append(f"{lem} {pos.value} {len(senses)} 0 {len(senses)} 0 {offs}")
        (args.out / f"index.{pos.filename}").write_text("".join(header) + "\n".join(index) + "\n", encoding="utf-8")
    print(f"wrote {len(keep)} synsets to {args.out}")


if __name__ == "__main__":
    main()
