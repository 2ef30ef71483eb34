"""Command-line entry point: JSONL in, JSONL out.

Exit codes: 0 success, 1 usage error, 2 data error (bad input, missing
resources, failed verification).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import FinegrainError, MalformedLine

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
ENV_WORDNET = "WORDNET_DIR"
ENV_VOCAB = "FINEGRAIN_VOCAB"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class DataError(Exception):
    pass


# -- corpus statistics ------------------------------------------------------------


@dataclass
class SourceStats:
    name: str
    images: int
    texts: int


@dataclass
class CorpusStats:
    sources: list[SourceStats] = field(default_factory=list)

    @property
    def total_images(self) -> int:
        return sum(s.images for s in self.sources)

    @property
    def total_texts(self) -> int:
        return sum(s.texts for s in self.sources)

    def to_record(self) -> dict:
        return {
            "sources": [{"source": s.name, "images": s.images, "texts": s.texts} for s in self.sources],
            "total": {"images": self.total_images, "texts": self.total_texts},
        }

    def render(self) -> str:
        rows = [(s.name, s.images, s.texts) for s in self.sources] + [("Total", self.total_images, self.total_texts)]
        width = max(len("Source"), *(len(r[0]) for r in rows))
        lines = [f"{'Source':<{width}}  {'#Images':>10}  {'#Text':>10}"]
        lines.append("-" * len(lines[0]))
        for name, im, tx in rows:
            lines.append(f"{name:<{width}}  {im:>10}  {tx:>10}")
        return "\n".join(lines)


def manifest_counts(path) -> SourceStats:
    """Distinct ``image_id`` values and caption lines of one JSONL manifest."""
    path = Path(path)
    if not path.is_file():
        from .errors import MissingFile

        raise MissingFile(str(path))
    images = set()
    texts = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "image_id" not in rec or "caption" not in rec:
                raise MalformedLine(path, lineno, "expected an object with image_id and caption")
            if not isinstance(rec["caption"], str):
                raise MalformedLine(path, lineno, "caption must be a string")
            images.add(json.dumps(rec["image_id"], sort_keys=True))
            texts += 1
    return SourceStats(path.stem, len(images), texts)


def corpus_stats(paths: Iterable) -> CorpusStats:
    return CorpusStats([manifest_counts(p) for p in paths])


# -- shared helpers -----------------------------------------------------------------


def _emit(records: Iterable[dict], out) -> None:
    # one write per line so a reader that stops early never sees half a record
    for rec in records:
        out.write(json.dumps(rec, ensure_ascii=False) + "\n")
        out.flush()


def _read_jsonl(stream, name: str = "<stdin>") -> Iterator[dict]:
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(name, lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise MalformedLine(name, lineno, "expected a JSON object")
        yield rec


def _text_of(rec: dict, lineno_hint: str = "") -> str:
    for key in ("caption", "text"):
        if isinstance(rec.get(key), str):
            return rec[key]
    raise DataError(f"record {lineno_hint}has no 'caption' or 'text' string field")


def _load_graph(arg):
    from .wordnet import default_wordnet_dir, load_wordnet, mini_wordnet_dir

    path = arg or default_wordnet_dir() or mini_wordnet_dir()
    return load_wordnet(path)


def _load_vocab(arg):
    from .tokenizer import load_vocab
    from .toymodel.corpus import toy_vocab_path

    return load_vocab(arg or os.environ.get(ENV_VOCAB) or toy_vocab_path())


# -- subcommands ----------------------------------------------------------------------

_WORKER_GRAPH = None


def _init_worker(wordnet):
    global _WORKER_GRAPH
    _WORKER_GRAPH = _load_graph(wordnet)


def _rewrite_one(job):
    from .rewriter import rewrite_records

    ordinal, rec, seed, k, mode = job
    return list(rewrite_records([rec], _WORKER_GRAPH, seed=seed, k=k, mode=mode, ordinal_offset=ordinal))


def cmd_rewrite(args, stdin, stdout) -> int:
    from .rewriter import rewrite_records

    records = _read_jsonl(stdin)

    def checked():
        for i, rec in enumerate(records):
            _text_of(rec, f"{i + 1} ")
            yield rec

    if args.workers <= 1:
        graph = _load_graph(args.wordnet)
        _emit(rewrite_records(checked(), graph, seed=args.seed, k=args.k, mode=args.mode), stdout)
        return EXIT_OK
    import multiprocessing as mp

    jobs = ((i, rec, args.seed, args.k, args.mode) for i, rec in enumerate(checked()))
    with mp.get_context("spawn").Pool(args.workers, initializer=_init_worker, initargs=(args.wordnet,)) as pool:
        # imap keeps input order
        for batch in pool.imap(_rewrite_one, jobs, chunksize=16):
            _emit(batch, stdout)
    return EXIT_OK


def cmd_tagpos(args, stdin, stdout) -> int:
    from .linguistics import select_rewrite_candidates, tag_sentence

    graph = _load_graph(args.wordnet)

    def run():
        for i, rec in enumerate(_read_jsonl(stdin)):
            words = tag_sentence(_text_of(rec, f"{i + 1} "), graph)
            yield {
                "id": rec.get("id"),
                "words": [{"surface": w.surface, "lemma": w.lemma, "tag": w.tag.value} for w in words],
                "candidates": select_rewrite_candidates(words, graph),
            }

    _emit(run(), stdout)
    return EXIT_OK


def cmd_tokenize(args, stdin, stdout) -> int:
    from .tokenizer import tokenize

    vocab = _load_vocab(args.vocab)

    def run():
        for i, rec in enumerate(_read_jsonl(stdin)):
            seq = tokenize(_text_of(rec, f"{i + 1} "), vocab, max_len=args.max_len)
            yield {
                "id": rec.get("id"),
                "ids": list(seq.ids),
                "tokens": list(seq.tokens),
                "word_spans": {str(k): list(v) for k, v in seq.word_spans.items()},
            }

    _emit(run(), stdout)
    return EXIT_OK


def cmd_mask(args, stdin, stdout) -> int:
    from .rewriter import derive_seed
    from .tokenizer import apply_mlm_mask, tokenize

    vocab = _load_vocab(args.vocab)

    def run():
        for i, rec in enumerate(_read_jsonl(stdin)):
            seq = tokenize(_text_of(rec, f"{i + 1} "), vocab, max_len=args.max_len)
            forced = None
            if rec.get("replaced_index") is not None:
                forced = seq.word_spans.get(int(rec["replaced_index"]))
            seed = derive_seed(args.seed, i)
            m = apply_mlm_mask(seq, forced, vocab, seed, rate=args.rate)
            yield {
                "id": rec.get("id"),
                "ids": list(m.ids),
                "tokens": [vocab.tokens[t] for t in m.ids],
                "mlm_labels": list(m.mlm_labels),
                "forced_position": m.forced_position,
                "seed": seed,
            }

    _emit(run(), stdout)
    return EXIT_OK


def cmd_grad_check(args, stdin, stdout) -> int:
    from .gradcheck import KERNELS, check_composite, check_kernel

    rows = []
    names = list(KERNELS) + ([] if args.no_composite else ["composite"])
    print(f"{'check':<10} {'dimensions':<26} {'points':>6} {'max_rel_err':>12} {'seconds':>8}  status", file=stdout)
    for name in names:
        row = check_composite(args.points, args.seed) if name == "composite" else check_kernel(name, args.points, args.seed)
        rows.append(row)
        status = "PASS" if row.passed else "FAIL"
        print(
            f"{row.name:<10} {row.dims:<26} {row.points:>6} {row.max_rel_error:>12.3e} {row.seconds:>8.2f}  {status}",
            file=stdout,
        )
        stdout.flush()
    return EXIT_OK if all(r.passed for r in rows) else EXIT_DATA


def _train_config(args):
    from .toymodel.train import TrainConfig

    return TrainConfig(
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        optimizer=args.optimizer,
        batch_size=args.batch_size,
        queue_size=args.queue_size,
        margin=args.margin,
        tau_init=args.tau,
        momentum=args.momentum,
        noisy_fraction=args.noisy_fraction,
        noise_rate=args.noise_rate,
        n_train=args.n_train,
        n_eval=args.n_eval,
        use_ritc=not args.no_ritc,
        use_ritm=not args.no_ritm,
        use_rlm=not args.no_rlm,
        hsr=args.hsr,
        ritc_paper_sign=args.ritc_paper_sign,
        separate_ritm_heads=args.separate_ritm_heads,
        eval_every=args.eval_every,
        k_recall=args.k_recall,
    )


def cmd_train_toy(args, stdin, stdout) -> int:
    from .toymodel.train import save_checkpoint, train_run

    try:
        cfg = _train_config(args)
    except ValueError as exc:
        raise UsageError(f"train-toy: {exc}") from None
    graph = _load_graph(args.wordnet)
    vocab = _load_vocab(args.vocab)
    keys = ("epoch", "step", "itc", "ritc", "ritm", "mlm", "rlm", "total", "r1_i2t", "r1_t2i", "rlm_acc")
    sink = open(args.metrics, "w", encoding="utf-8") if args.metrics else stdout
    try:
        res = train_run(cfg, graph, vocab, log=lambda row: _emit([{k: row.get(k) for k in keys}], sink))
    finally:
        if sink is not stdout:
            sink.close()
    if args.out:
        save_checkpoint(args.out, res.model, cfg)
    summary = {"final": res.final, "seconds": round(res.seconds, 2), "checkpoint": None if args.out is None else str(args.out)}
    print(json.dumps(summary), file=sys.stderr if sink is stdout else stdout)
    return EXIT_OK


def cmd_eval_toy(args, stdin, stdout) -> int:
    from .toymodel.corpus import generate_toy_corpus
    from .toymodel.train import chance_rlm_accuracy, eval_retrieval, eval_rlm, load_checkpoint

    if not Path(args.checkpoint).is_file():
        from .errors import MissingFile

        raise MissingFile(args.checkpoint)
    model, train_cfg = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else (train_cfg.seed if train_cfg else 0)
    n_train = train_cfg.n_train if train_cfg else 2000
    n_eval = args.n_eval or (train_cfg.n_eval if train_cfg else 200)
    _, evalset = generate_toy_corpus(seed, n_train, n_eval)
    graph = _load_graph(args.wordnet)
    vocab = _load_vocab(args.vocab)
    out = eval_retrieval(model, evalset, vocab, k_recall=args.k_recall)
    out["rlm_acc"] = eval_rlm(model, evalset, vocab, graph, seed=seed)
    out["rlm_chance"] = chance_rlm_accuracy(evalset, vocab, graph, seed=seed)
    _emit([out], stdout)
    return EXIT_OK


def cmd_corpus_stats(args, stdin, stdout) -> int:
    stats = corpus_stats(args.manifests)
    if args.json:
        _emit([stats.to_record()], stdout)
    else:
        print(stats.render(), file=stdout)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="finegrain-vlp", description="Hard-negative caption rewriting and toy pre-training objectives.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="command")
    sub.required = True

    def wordnet_flag(sp):
        sp.add_argument(
            "--wordnet", type=Path, default=None,
            help=f"WordNet database directory (default: ${ENV_WORDNET}, the user cache, then the bundled subset)",
        )

    def vocab_flag(sp):
        sp.add_argument("--vocab", type=Path, default=None, help=f"WordPiece vocabulary file (default: ${ENV_VOCAB} or the toy vocabulary)")

    sp = sub.add_parser("rewrite", help="rewrite one word of each caption (JSONL {id, caption} on stdin)")
    sp.add_argument("--seed", type=int, default=0, help="base seed; per-caption seeds are derived from it")
    sp.add_argument("-k", type=int, default=1, help="rewrites per caption")
    sp.add_argument("--mode", choices=("wordnet", "random"), default="wordnet", help="substitute source")
    sp.add_argument("--workers", type=int, default=1, help="parallel worker processes (output order is preserved)")
    wordnet_flag(sp)
    sp.set_defaults(func=cmd_rewrite)

    sp = sub.add_parser("tagpos", help="tag words and list rewrite candidates (JSONL {caption} on stdin)")
    wordnet_flag(sp)
    sp.set_defaults(func=cmd_tagpos)

    sp = sub.add_parser("tokenize", help="WordPiece-tokenize captions (JSONL {caption} on stdin)")
    vocab_flag(sp)
    sp.add_argument("--max-len", type=int, default=30, help="maximum sequence length including [CLS] and [SEP]")
    sp.set_defaults(func=cmd_tokenize)

    sp = sub.add_parser("mask", help="apply MLM masking (JSONL {caption, replaced_index?} on stdin)")
    vocab_flag(sp)
    sp.add_argument("--seed", type=int, default=0, help="base seed; per-line seeds are derived from it")
    sp.add_argument("--rate", type=float, default=0.15, help="token selection rate")
    sp.add_argument("--max-len", type=int, default=30, help="maximum sequence length including [CLS] and [SEP]")
    sp.set_defaults(func=cmd_mask)

    sp = sub.add_parser("grad-check", help="finite-difference check of every loss and the composite model")
    sp.add_argument("--points", type=int, default=100, help="random points per check")
    sp.add_argument("--seed", type=int, default=0, help="seed for the random points")
    sp.add_argument("--no-composite", action="store_true", help="skip the composite toy-model check")
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("train-toy", help="train the toy model; per-epoch metrics as JSONL")
    sp.add_argument("--seed", type=int, default=0, help="seed for corpus, initialization and all sampling")
    sp.add_argument("--epochs", type=int, default=15, help="training epochs")
    sp.add_argument("--lr", type=float, default=2e-3, help="learning rate")
    sp.add_argument("--weight-decay", type=float, default=0.02, help="decoupled weight decay")
    sp.add_argument("--optimizer", choices=("adamw", "gd"), default="adamw", help="optimizer")
    sp.add_argument("--batch-size", type=int, default=32, help="batch size N")
    sp.add_argument("--queue-size", type=int, default=256, help="momentum queue size M")
    sp.add_argument("--margin", type=float, default=0.2, help="RITC margin beta")
    sp.add_argument("--tau", type=float, default=0.07, help="initial ITC temperature")
    sp.add_argument("--momentum", type=float, default=0.995, help="momentum encoder coefficient m")
    sp.add_argument("--noisy-fraction", type=float, default=0.8, help="fraction of epochs on noisy captions")
    sp.add_argument("--noise-rate", type=float, default=0.15, help="word dropout rate of noisy captions")
    sp.add_argument("--n-train", type=int, default=2000, help="training scenes")
    sp.add_argument("--n-eval", type=int, default=200, help="evaluation scenes")
    sp.add_argument("--no-ritc", action="store_true", help="drop the RITC loss")
    sp.add_argument("--no-ritm", action="store_true", help="drop the RITM loss")
    sp.add_argument("--no-rlm", action="store_true", help="drop the RLM loss")
    sp.add_argument("--hsr", choices=("wordnet", "random", "off"), default="wordnet", help="caption rewriting mode")
    sp.add_argument("--ritc-paper-sign", action="store_true", help="use the RITC hinge with its minima swapped")
    sp.add_argument("--separate-ritm-heads", action="store_true", help="score rewritten-caption pairs with their own matching head")
    sp.add_argument("--eval-every", type=int, default=5, help="evaluate every n epochs (0: last epoch only)")
    sp.add_argument("--k-recall", type=int, default=16, help="stage-one shortlist size")
    sp.add_argument("--metrics", type=Path, default=None, help="metrics JSONL path (default: stdout)")
    sp.add_argument("--out", type=Path, default=None, help="checkpoint path (.npz)")
    wordnet_flag(sp)
    vocab_flag(sp)
    sp.set_defaults(func=cmd_train_toy)

    sp = sub.add_parser("eval-toy", help="evaluate a checkpoint on its held-out toy scenes")
    sp.add_argument("--checkpoint", type=Path, required=True, help="checkpoint written by train-toy")
    sp.add_argument("--seed", type=int, default=None, help="corpus seed (default: the training seed)")
    sp.add_argument("--n-eval", type=int, default=None, help="evaluation scenes (default: as trained)")
    sp.add_argument("--k-recall", type=int, default=16, help="stage-one shortlist size")
    wordnet_flag(sp)
    vocab_flag(sp)
    sp.set_defaults(func=cmd_eval_toy)

    sp = sub.add_parser("corpus-stats", help="image and caption counts of JSONL manifests")
    sp.add_argument("manifests", nargs="*", type=Path, help="manifest files with {image_id, caption} lines")
    sp.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    sp.set_defaults(func=cmd_corpus_stats)
    return p


def main(argv=None, stdin=None, stdout=None, stderr=None) -> int:
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "k", 1) < 1:
            raise UsageError("rewrite: -k must be >= 1")
        return args.func(args, stdin, stdout)
    except UsageError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    except (FinegrainError, DataError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # downstream closed the pipe; silence the interpreter's flush at exit
        try:
            sys.stdout = open(os.devnull, "w")
        except OSError:
            pass
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
