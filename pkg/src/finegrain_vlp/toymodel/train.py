"""Batch construction, the two-stage training loop, and evaluation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from ..errors import NoCandidate, SpanTruncated
from ..losses import (
    COMPONENTS,
    MomentumQueue,
    itc_loss,
    mlm_loss,
    ritc_loss,
    ritm_loss,
    rlm_loss,
    sample_hard_negatives,
)
from ..rewriter import derive_seed, rewrite_sentence
from ..tokenizer import IGNORE_INDEX, Vocab, apply_mlm_mask, rlm_target, tokenize
from .corpus import ToyScene, generate_toy_corpus, noisy_caption
from .model import ToyEncoders, kernel_loss, new_model, pad_ids, pad_symbols

HSR_MODES = ("wordnet", "random", "off")

# stream keys for derive_seed, so no two consumers share a seed
_S_NOISE, _S_REWRITE, _S_MASK, _S_HARDNEG, _S_SHUFFLE, _S_EVAL_RLM = range(1, 7)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 15
    lr: float = 2e-3
    weight_decay: float = 0.02
    optimizer: str = "adamw"
    batch_size: int = 32
    queue_size: int = 256
    margin: float = 0.2
    tau_init: float = 0.07
    momentum: float = 0.995
    noisy_fraction: float = 0.8
    noise_rate: float = 0.15
    n_train: int = 2000
    n_eval: int = 200
    dim: int = 64
    proj_dim: int = 32
    ffn_dim: int = 128
    mask_rate: float = 0.15
    k_recall: int = 16
    use_ritc: bool = True
    use_ritm: bool = True
    use_rlm: bool = True
    hsr: str = "wordnet"
    ritc_paper_sign: bool = False
    separate_ritm_heads: bool = False
    eval_every: int = 5

    def __post_init__(self):
        if self.hsr not in HSR_MODES:
            raise ValueError(f"hsr must be one of {HSR_MODES}")
        if self.optimizer not in ("gd", "adamw"):
            raise ValueError("optimizer must be 'gd' or 'adamw'")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for in-batch negatives")
        if not 0 <= self.noisy_fraction <= 1:
            raise ValueError("noisy_fraction must lie in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def noisy_epochs(self) -> int:
        return int(round(self.noisy_fraction * self.epochs))


@dataclass
class Batch:
    scenes: list
    symbols: torch.Tensor
    sym_mask: torch.Tensor
    ids: torch.Tensor
    mask: torch.Tensor
    word_mask: torch.Tensor
    mlm_ids: torch.Tensor
    mlm_labels: np.ndarray
    rw_rows: np.ndarray  # batch row of each rewritten caption
    rw_ids: torch.Tensor
    rw_mask: torch.Tensor
    rw_word_mask: torch.Tensor
    rlm_pos: np.ndarray  # target position per rewritten caption, -1 when truncated
    n_skipped: int = 0


def _word_mask(ids: torch.Tensor, vocab: Vocab) -> torch.Tensor:
    special = torch.as_tensor(sorted(vocab.special_ids))
    return ~torch.isin(ids, special)


def build_batch(
    scenes: Sequence[ToyScene],
    captions: Sequence[str],
    vocab: Vocab,
    graph,
    *,
    hsr: str = "wordnet",
    seed: int = 0,
    epoch: int = 0,
    ordinals: Sequence[int] | None = None,
    mask_rate: float = 0.15,
) -> Batch:
    """Rewrite, tokenize and mask one batch. Each sample's randomness comes
    from ``derive_seed(seed, stream, epoch, ordinal)``; captions without a
    rewrite candidate simply take no part in the refined terms."""
    ordinals = range(len(scenes)) if ordinals is None else ordinals
    seqs, masked, rw_rows, rw_seqs, rlm_pos = [], [], [], [], []
    skipped = 0
    for row, (caption, ordinal) in enumerate(zip(captions, ordinals)):
        seq = tokenize(caption, vocab)
        forced = None
        if hsr != "off":
            try:
                res = rewrite_sentence(
                    caption, graph, seed=derive_seed(seed, _S_REWRITE, epoch, ordinal), mode=hsr
                )
            except NoCandidate:
                skipped += 1
            else:
                rw = tokenize(res.rewritten_text, vocab)
                forced = seq.word_spans.get(res.replaced_index)
                try:
                    pos = rlm_target(rw, res.replaced_index).position
                except SpanTruncated:
                    pos = -1
                rw_rows.append(row)
                rw_seqs.append(rw.ids)
                rlm_pos.append(pos)
        m = apply_mlm_mask(seq, forced, vocab, derive_seed(seed, _S_MASK, epoch, ordinal), rate=mask_rate)
        seqs.append(seq.ids)
        masked.append(m)

    length = max([len(s) for s in seqs] + [len(s) for s in rw_seqs])
    ids, mask = pad_ids(seqs, vocab.pad_id, length)
    mlm_ids, _ = pad_ids([m.ids for m in masked], vocab.pad_id, length)
    labels = np.full((len(seqs), length), IGNORE_INDEX, dtype=np.int64)
    for i, m in enumerate(masked):
        labels[i, : len(m.mlm_labels)] = m.mlm_labels
    if rw_seqs:
        rw_ids, rw_mask = pad_ids(rw_seqs, vocab.pad_id, length)
    else:
        rw_ids = torch.zeros((0, length), dtype=torch.int64)
        rw_mask = torch.zeros((0, length), dtype=torch.bool)
    symbols, sym_mask = pad_symbols(scenes)
    return Batch(
        scenes=list(scenes),
        symbols=symbols,
        sym_mask=sym_mask,
        ids=ids,
        mask=mask,
        word_mask=_word_mask(ids, vocab),
        mlm_ids=mlm_ids,
        mlm_labels=labels,
        rw_rows=np.asarray(rw_rows, dtype=np.int64),
        rw_ids=rw_ids,
        rw_mask=rw_mask,
        rw_word_mask=_word_mask(rw_ids, vocab),
        rlm_pos=np.asarray(rlm_pos, dtype=np.int64),
        n_skipped=skipped,
    )


@dataclass
class Switches:
    ritc: bool = True
    ritm: bool = True
    rlm: bool = True
    ritc_paper_sign: bool = False
    margin: float = 0.2


def _result(res, *names):
    return res.value, [res.grads[n] for n in names]


def compute_losses(
    model: ToyEncoders,
    batch: Batch,
    switches: Switches,
    *,
    img_queue=None,
    txt_queue=None,
    negatives: tuple[np.ndarray, np.ndarray] | None = None,
    neg_seed: int = 0,
    momentum_feats: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> tuple[dict[str, torch.Tensor | None], dict]:
    """Every enabled objective as a differentiable scalar.

    Returns ``(terms, aux)``; ``aux`` carries the momentum features to enqueue
    and the hard negatives that were used.
    """
    uni = model.uni
    v_states, v_cls = uni.image(batch.symbols, batch.sym_mask)
    t_states, t_cls = uni.text(batch.ids, batch.mask)
    v_proj = uni.project_image(v_cls)
    t_proj = uni.project_text(t_cls)
    if momentum_feats is None:
        with torch.no_grad():
            vm = model.uni_m.project_image(model.uni_m.image(batch.symbols, batch.sym_mask)[1])
            tm = model.uni_m.project_text(model.uni_m.text(batch.ids, batch.mask)[1])
    else:
        vm, tm = momentum_feats
    qv = np.zeros((0, v_proj.shape[1])) if img_queue is None else _contents(img_queue)
    qt = np.zeros((0, v_proj.shape[1])) if txt_queue is None else _contents(txt_queue)
    vm_np, tm_np = vm.numpy(), tm.numpy()

    def itc_fn(t, v, log_tau):
        res = itc_loss(t, v, qv, qt, float(np.exp(log_tau)), text_cand=tm_np, img_cand=vm_np, validate=False)
        return _result(res, "text_proj", "img_proj", "log_tau")

    terms: dict[str, torch.Tensor | None] = dict.fromkeys(COMPONENTS)
    terms["itc"] = kernel_loss(itc_fn, t_proj, v_proj, model.log_tau)

    n = len(batch.scenes)
    rw = batch.rw_rows
    has_rw = len(rw) > 0
    rw_states = uni.text(batch.rw_ids, batch.rw_mask)[0] if has_rw else None

    if switches.ritc and has_rw:
        wmask = batch.word_mask[rw].numpy()
        whmask = batch.rw_word_mask.numpy()
        keep = wmask.any(1) & whmask.any(1)
        if keep.any():
            idx = np.flatnonzero(keep)
            rows = torch.as_tensor(rw[idx])

            def ritc_fn(v, w, wh):
                res = ritc_loss(v, w, wh, wmask[idx], switches.margin, whmask[idx], paper_sign=switches.ritc_paper_sign)
                return _result(res, "img_cls_proj", "token_projs", "rewritten_token_projs")

            terms["ritc"] = kernel_loss(
                ritc_fn,
                v_proj[rows],
                uni.project_text(t_states[rows]),
                uni.project_text(rw_states[torch.as_tensor(idx)]),
            )

    # one fusion pass over every (image, text) pair the batch needs
    pair_img, pair_txt, pair_mask, spans = [], [], [], {}

    def add(name, img_idx, txt_states, txt_mask):
        start = sum(len(x) for x in pair_img)
        pair_img.append(torch.as_tensor(img_idx, dtype=torch.int64))
        pair_txt.append(txt_states)
        pair_mask.append(txt_mask)
        spans[name] = (start, start + len(img_idx))

    if negatives is None and switches.ritm:
        with torch.no_grad():
            sim = (v_proj @ t_proj.T).numpy()
        negatives = sample_hard_negatives(sim, neg_seed, temperature=model.tau)
    if switches.ritm:
        neg_t, neg_v = negatives
        add("pos", np.arange(n), t_states, batch.mask)
        add("neg_t", np.arange(n), t_states[torch.as_tensor(neg_t)], batch.mask[torch.as_tensor(neg_t)])
        add("neg_v", neg_v, t_states, batch.mask)
    if has_rw and (switches.ritm or switches.rlm):
        add("rw", rw, rw_states, batch.rw_mask)
    mlm_states = uni.text(batch.mlm_ids, batch.mask)[0]
    add("mlm", np.arange(n), mlm_states, batch.mask)

    img_idx = torch.cat(pair_img)
    txt_mask = torch.cat(pair_mask)
    fused = model.fuse(torch.cat(pair_txt), txt_mask, v_states[img_idx], batch.sym_mask[img_idx])

    def part(name):
        a, b = spans[name]
        return fused[a:b], txt_mask[a:b]

    if switches.ritm:
        pos_logits = model.itm_logits(*part("pos"))
        neg_logits = torch.cat([model.itm_logits(*part("neg_t")), model.itm_logits(*part("neg_v"))])
        if has_rw:
            rw_logits = model.itm_logits(*part("rw"), rewritten=True)

            def ritm_fn(p, h, r):
                return _result(ritm_loss(p, h, r), "pos_logits", "hardneg_logits", "rewritten_logits")

            terms["ritm"] = kernel_loss(ritm_fn, pos_logits, neg_logits, rw_logits)
        else:

            def ritm_fn2(p, h):
                return _result(ritm_loss(p, h), "pos_logits", "hardneg_logits")

            terms["ritm"] = kernel_loss(ritm_fn2, pos_logits, neg_logits)

    mlm_logits = model.mlm_head(part("mlm")[0])
    labels = batch.mlm_labels

    def mlm_fn(x):
        return _result(mlm_loss(x, labels), "logits")

    terms["mlm"] = kernel_loss(mlm_fn, mlm_logits)

    if switches.rlm and has_rw:
        ok = np.flatnonzero(batch.rlm_pos >= 0)
        if len(ok):
            pos_logits_rlm = model.rlm_logits(part("rw")[0])[torch.as_tensor(ok)]
            valid = batch.rw_word_mask.numpy()[ok]
            target = batch.rlm_pos[ok]

            def rlm_fn(x):
                return _result(rlm_loss(x, target, valid), "position_logits")

            terms["rlm"] = kernel_loss(rlm_fn, pos_logits_rlm)

    aux = {"vm": vm, "tm": tm, "negatives": negatives}
    return terms, aux


def _contents(q):
    return q.contents() if isinstance(q, MomentumQueue) else np.asarray(q, dtype=np.float64)


def sum_terms(terms: dict) -> torch.Tensor:
    present = [t for t in terms.values() if t is not None]
    return torch.stack(present).sum()


def _weight_names(model: ToyEncoders) -> set[str]:
    # decoupled decay on weight matrices and embeddings only
    return {n for n, p in model.named_parameters() if p.requires_grad and p.dim() >= 2}


class GradientDescent:
    """Plain gradient descent with decoupled weight decay."""

    def __init__(self, model: ToyEncoders, lr: float, weight_decay: float):
        self.model = model
        self.lr = lr
        self.wd = weight_decay
        self.decay = _weight_names(model)

    def zero_grad(self):
        self.model.zero_grad(set_to_none=True)

    @torch.no_grad()
    def step(self):
        for name, p in self.model.named_parameters():
            if not p.requires_grad:
                continue
            if name in self.decay:
                p.mul_(1.0 - self.lr * self.wd)
            if p.grad is not None:
                p.add_(p.grad, alpha=-self.lr)


def make_optimizer(model: ToyEncoders, cfg: TrainConfig):
    if cfg.optimizer == "gd":
        return GradientDescent(model, cfg.lr, cfg.weight_decay)
    decay = _weight_names(model)
    params = [p for p in model.parameters() if p.requires_grad]
    groups = [
        {"params": [p for n, p in model.named_parameters() if n in decay], "weight_decay": cfg.weight_decay},
        {"params": [p for n, p in model.named_parameters() if p.requires_grad and n not in decay], "weight_decay": 0.0},
    ]
    assert sum(len(g["params"]) for g in groups) == len(params)
    return torch.optim.AdamW(groups, lr=cfg.lr)


# -- evaluation ---------------------------------------------------------------------


def recall_then_rerank(sim: np.ndarray, score_fn: Callable, k_recall: int, ks=(1, 5, 10)) -> dict:
    """R@K in both directions for a square similarity matrix ``sim[image, text]``
    whose diagonal holds the true pairs.

    Stage one keeps the ``k_recall`` most similar candidates per query; stage
    two orders them by ``score_fn(image_idx, text_idx)`` (higher is better).
    """
    sim = np.asarray(sim, dtype=np.float64)
    n = sim.shape[0]
    k_recall = min(k_recall, n)
    if k_recall < max(ks) and k_recall < n:
        raise ValueError("k_recall must be at least the largest K")
    out = {}
    for direction, mat in (("i2t", sim), ("t2i", sim.T)):
        short = np.argsort(-mat, axis=1, kind="stable")[:, :k_recall]
        q = np.repeat(np.arange(n), k_recall)
        c = short.reshape(-1)
        img, txt = (q, c) if direction == "i2t" else (c, q)
        scores = np.asarray(score_fn(img, txt), dtype=np.float64).reshape(n, k_recall)
        order = np.argsort(-scores, axis=1, kind="stable")
        ranked = np.take_along_axis(short, order, axis=1)
        hit = ranked == np.arange(n)[:, None]
        for k in ks:
            out[f"r{k}_{direction}"] = float(hit[:, :k].any(axis=1).mean())
    return out


@torch.no_grad()
def _encode_eval(model: ToyEncoders, scenes, vocab: Vocab):
    seqs = [tokenize(s.caption, vocab).ids for s in scenes]
    ids, mask = pad_ids(seqs, vocab.pad_id)
    sym, smask = pad_symbols(scenes)
    v_states, v_cls = model.uni.image(sym, smask)
    t_states, t_cls = model.uni.text(ids, mask)
    return v_states, smask, model.uni.project_image(v_cls), t_states, mask, model.uni.project_text(t_cls)


@torch.no_grad()
def match_probability(model, v_states, smask, t_states, tmask, img, txt, chunk: int = 2048) -> np.ndarray:
    out = []
    for a in range(0, len(img), chunk):
        i = torch.as_tensor(img[a : a + chunk])
        t = torch.as_tensor(txt[a : a + chunk])
        fused = model.fuse(t_states[t], tmask[t], v_states[i], smask[i])
        out.append(torch.softmax(model.itm_logits(fused, tmask[t]), dim=-1)[:, 1].numpy())
    return np.concatenate(out)


def eval_retrieval(model: ToyEncoders, scenes, vocab: Vocab, k_recall: int = 16, ks=(1, 5, 10)) -> dict:
    """Recall top-``k_recall`` by uni-modal similarity, then re-rank by the
    matching head's match probability."""
    captions = [s.caption for s in scenes]
    if len(set(captions)) != len(captions):
        raise ValueError("evaluation captions must be pairwise unique")
    v_states, smask, v_proj, t_states, tmask, t_proj = _encode_eval(model, scenes, vocab)
    sim = (v_proj @ t_proj.T).numpy()

    def score(img, txt):
        return match_probability(model, v_states, smask, t_states, tmask, img, txt)

    return recall_then_rerank(sim, score, k_recall, ks)


def rlm_accuracy(logits, valid_mask, targets, seed: int = 0) -> float:
    """Top-1 accuracy of the replaced-position prediction; exact ties among the
    best valid positions are broken uniformly at random."""
    x = np.where(np.asarray(valid_mask, dtype=bool), np.asarray(logits, dtype=np.float64), -np.inf)
    targets = np.asarray(targets)
    if len(targets) == 0:
        return float("nan")
    rng = np.random.default_rng(seed)
    hits = 0
    for row, t in zip(x, targets):
        best = np.flatnonzero(row == row.max())
        hits += int(best[rng.integers(len(best))] == t)
    return hits / len(targets)


@torch.no_grad()
def eval_rlm(model: ToyEncoders, scenes, vocab: Vocab, graph, seed: int = 0, mode: str = "wordnet") -> float:
    """Replaced-token accuracy on eval captions rewritten with held-out seeds.
    Captions without a candidate or with a truncated span are excluded."""
    scene_rows, seqs, targets = [], [], []
    for i, s in enumerate(scenes):
        try:
            res = rewrite_sentence(s.caption, graph, seed=derive_seed(seed, _S_EVAL_RLM, i), mode=mode)
        except NoCandidate:
            continue
        rw = tokenize(res.rewritten_text, vocab)
        try:
            targets.append(rlm_target(rw, res.replaced_index).position)
        except SpanTruncated:
            continue
        scene_rows.append(i)
        seqs.append(rw.ids)
    if not seqs:
        return float("nan")
    ids, mask = pad_ids(seqs, vocab.pad_id)
    sym, smask = pad_symbols([scenes[i] for i in scene_rows])
    v_states, _ = model.uni.image(sym, smask)
    t_states, _ = model.uni.text(ids, mask)
    logits = model.rlm_logits(model.fuse(t_states, mask, v_states, smask)).numpy()
    return rlm_accuracy(logits, _word_mask(ids, vocab).numpy(), targets, seed=derive_seed(seed, _S_EVAL_RLM))


def chance_rlm_accuracy(scenes, vocab: Vocab, graph, seed: int = 0, mode: str = "wordnet") -> float:
    """Expected accuracy of a position guess uniform over valid tokens."""
    inv = []
    for i, s in enumerate(scenes):
        try:
            res = rewrite_sentence(s.caption, graph, seed=derive_seed(seed, _S_EVAL_RLM, i), mode=mode)
        except NoCandidate:
            continue
        rw = tokenize(res.rewritten_text, vocab)
        if res.replaced_index not in rw.word_spans:
            continue
        n_valid = sum(t not in vocab.special_ids for t in rw.ids)
        inv.append(1.0 / n_valid)
    return float(np.mean(inv)) if inv else float("nan")


# -- training -------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: ToyEncoders
    config: TrainConfig
    timeline: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    seconds: float = 0.0

    def epoch_means(self, name: str) -> list:
        return [row[name] for row in self.timeline if row.get("kind", "epoch") == "epoch"]


def train_run(
    config: TrainConfig,
    graph,
    vocab: Vocab,
    *,
    corpus: tuple[list, list] | None = None,
    log: Callable[[dict], None] | None = None,
    log_steps: bool = False,
    eval_hsr_mode: str = "wordnet",
) -> TrainResult:
    """Two-stage training: the first ``noisy_fraction`` of epochs read
    word-dropped captions, the rest the clean ones. Every step rewrites,
    tokenizes and masks its batch, optimizes the summed objective, updates
    the momentum encoders and enqueues their features."""
    cfg = config
    t0 = time.perf_counter()
    train, evalset = corpus if corpus is not None else generate_toy_corpus(cfg.seed, cfg.n_train, cfg.n_eval)
    model = new_model(
        vocab, dim=cfg.dim, proj_dim=cfg.proj_dim, ffn_dim=cfg.ffn_dim, tau_init=cfg.tau_init, init_seed=cfg.seed,
        separate_ritm_heads=cfg.separate_ritm_heads,
    )
    opt = make_optimizer(model, cfg)
    img_q = MomentumQueue(cfg.queue_size, cfg.proj_dim)
    txt_q = MomentumQueue(cfg.queue_size, cfg.proj_dim)
    sw = Switches(cfg.use_ritc, cfg.use_ritm, cfg.use_rlm, cfg.ritc_paper_sign, cfg.margin)
    hsr = cfg.hsr
    timeline = []
    step = 0
    log_tau_bounds = (np.log(0.01), np.log(0.5))

    for epoch in range(cfg.epochs):
        noisy = epoch < cfg.noisy_epochs
        order = np.random.default_rng(derive_seed(cfg.seed, _S_SHUFFLE, epoch)).permutation(len(train))
        sums = {k: 0.0 for k in COMPONENTS + ("total",)}
        counts = {k: 0 for k in sums}
        for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            scenes = [train[i] for i in idx]
            if noisy and cfg.noise_rate > 0:
                caps = [
                    noisy_caption(s.caption, cfg.noise_rate, np.random.default_rng(derive_seed(cfg.seed, _S_NOISE, epoch, int(i))))
                    for s, i in zip(scenes, idx)
                ]
            else:
                caps = [s.caption for s in scenes]
            batch = build_batch(
                scenes, caps, vocab, graph, hsr=hsr, seed=cfg.seed, epoch=epoch, ordinals=[int(i) for i in idx],
                mask_rate=cfg.mask_rate,
            )
            terms, aux = compute_losses(
                model, batch, sw, img_queue=img_q, txt_queue=txt_q,
                neg_seed=derive_seed(cfg.seed, _S_HARDNEG, epoch, step),
            )
            total = sum_terms(terms)
            opt.zero_grad()
            total.backward()
            opt.step()
            with torch.no_grad():
                model.log_tau.clamp_(*log_tau_bounds)
            model.update_momentum(cfg.momentum)
            img_q.push(aux["vm"].numpy())
            txt_q.push(aux["tm"].numpy())
            values = {k: (None if v is None else float(v.detach())) for k, v in terms.items()}
            values["total"] = float(total.detach())
            for k, v in values.items():
                if v is not None:
                    sums[k] += v
                    counts[k] += 1
            if log_steps and log is not None:
                log({"kind": "step", "epoch": epoch + 1, "step": step, **values})
            step += 1
        row = {"kind": "epoch", "epoch": epoch + 1, "step": step}
        for k in sums:
            row[k] = sums[k] / counts[k] if counts[k] else None
        last = epoch == cfg.epochs - 1
        if last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0):
            ret = eval_retrieval(model, evalset, vocab, cfg.k_recall)
            row["r1_i2t"], row["r1_t2i"] = ret["r1_i2t"], ret["r1_t2i"]
            row["rlm_acc"] = eval_rlm(model, evalset, vocab, graph, seed=cfg.seed, mode=eval_hsr_mode)
        else:
            row["r1_i2t"] = row["r1_t2i"] = row["rlm_acc"] = None
        timeline.append(row)
        if log is not None:
            log(row)

    final = eval_retrieval(model, evalset, vocab, cfg.k_recall)
    final["rlm_acc"] = eval_rlm(model, evalset, vocab, graph, seed=cfg.seed, mode=eval_hsr_mode)
    final["rlm_chance"] = chance_rlm_accuracy(evalset, vocab, graph, seed=cfg.seed, mode=eval_hsr_mode)
    return TrainResult(model, cfg, timeline, final, time.perf_counter() - t0)


# -- checkpoints ----------------------------------------------------------------------


def save_checkpoint(path, model: ToyEncoders, config: TrainConfig | None = None) -> None:
    """``.npz`` with one array per parameter plus a JSON config echo."""
    meta = {"model": model.cfg.to_dict(), "train": None if config is None else config.to_dict()}
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __config__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[ToyEncoders, TrainConfig | None]:
    from .model import ModelConfig

    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["__config__"]))
        model = ToyEncoders(ModelConfig(**meta["model"]))
        model.load_arrays({k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")})
    train = None if meta["train"] is None else TrainConfig.from_dict(meta["train"])
    return model, train
