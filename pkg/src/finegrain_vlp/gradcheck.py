"""Central-difference verification of every loss kernel and of the composite
toy-model objective at many random points."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .losses import finite_diff_check, itc_loss, mlm_loss, ritc_loss, ritm_loss, rlm_loss
from .rewriter import derive_seed
from .tokenizer import IGNORE_INDEX

THRESHOLD = 1e-4
STEP = 1e-5
KERNELS = ("itc", "ritc", "ritm", "mlm", "rlm")
# shape ranges drawn by the point generators below
DIMS = {
    "itc": "N 2-5, D 3-8, M 0-11",
    "ritc": "B 1-3, L 2-6, D 3-7",
    "ritm": "pos 1-4, neg 1-8, rw 1-4",
    "mlm": "B 1-3, L 2-6, V 3-11",
    "rlm": "B 1-4, L 2-9",
    "composite": "batch 4, dim 8, proj 4",
}


@dataclass
class CheckRow:
    name: str
    points: int
    max_rel_error: float
    seconds: float

    @property
    def dims(self) -> str:
        return DIMS.get(self.name, "")

    @property
    def passed(self) -> bool:
        return self.points > 0 and self.max_rel_error < THRESHOLD

    def to_record(self) -> dict:
        return {
            "check": self.name,
            "dimensions": self.dims,
            "points": self.points,
            "max_rel_error": self.max_rel_error,
            "seconds": round(self.seconds, 3),
            "status": "PASS" if self.passed else "FAIL",
        }


def _unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _itc_point(rng):
    n, d, m = rng.integers(2, 6), rng.integers(3, 9), rng.integers(0, 12)
    inputs = {
        "text_proj": _unit(rng, n, d),
        "img_proj": _unit(rng, n, d),
        "text_cand": _unit(rng, n, d),
        "img_cand": _unit(rng, n, d),
        "log_tau": np.array(np.log(rng.uniform(0.05, 1.0))),
    }
    qv, qt = _unit(rng, m, d), _unit(rng, m, d)

    def fn(x):
        return itc_loss(
            x["text_proj"], x["img_proj"], qv, qt, float(np.exp(x["log_tau"])),
            text_cand=x["text_cand"], img_cand=x["img_cand"], validate=False,
        )

    return fn, inputs


def _ritc_point(rng, gap: float = 1e-3):
    # resample until no hinge sits on its kink and no two minima are near-tied
    while True:
        b, length, d = rng.integers(1, 4), rng.integers(2, 7), rng.integers(3, 8)
        v, w, wh = rng.normal(size=(b, d)), rng.normal(size=(b, length, d)), rng.normal(size=(b, length, d))
        mask = rng.random((b, length)) < 0.8
        mask[:, 0] = True
        margin = rng.uniform(0.0, 2.0)
        g = np.where(mask, np.einsum("bd,bld->bl", v, w), np.inf)
        gh = np.where(mask, np.einsum("bd,bld->bl", v, wh), np.inf)
        hinge = margin + gh.min(1) - g.min(1)
        sg, sgh = np.sort(g, 1), np.sort(gh, 1)
        ties = [(s[:, 1] - s[:, 0]) for s in (sg, sgh) if s.shape[1] > 1]
        tied = any(np.any(t < gap) for t in ties)
        if np.all(np.abs(hinge) > gap) and np.any(hinge > 0) and not tied:
            break

    def fn(x):
        return ritc_loss(x["img_cls_proj"], x["token_projs"], x["rewritten_token_projs"], mask, margin)

    return fn, {"img_cls_proj": v, "token_projs": w, "rewritten_token_projs": wh}


def _ritm_point(rng):
    inputs = {
        "pos_logits": rng.normal(scale=2.0, size=(rng.integers(1, 5), 2)),
        "hardneg_logits": rng.normal(scale=2.0, size=(rng.integers(1, 9), 2)),
        "rewritten_logits": rng.normal(scale=2.0, size=(rng.integers(1, 5), 2)),
    }
    return (lambda x: ritm_loss(x["pos_logits"], x["hardneg_logits"], x["rewritten_logits"])), inputs


def _mlm_point(rng):
    b, length, v = rng.integers(1, 4), rng.integers(2, 7), rng.integers(3, 12)
    labels = np.where(rng.random((b, length)) < 0.4, rng.integers(0, v, size=(b, length)), IGNORE_INDEX)
    labels[0, 0] = rng.integers(0, v)
    return (lambda x: mlm_loss(x["logits"], labels)), {"logits": rng.normal(scale=2.0, size=(b, length, v))}


def _rlm_point(rng):
    b, length = rng.integers(1, 5), rng.integers(2, 10)
    mask = rng.random((b, length)) < 0.7
    target = np.array([rng.integers(length) for _ in range(b)])
    mask[np.arange(b), target] = True
    mask[:, rng.integers(length)] = True  # at least one competitor most of the time

    def fn(x):
        return rlm_loss(x["position_logits"], target, mask)

    return fn, {"position_logits": rng.normal(scale=2.0, size=(b, length))}


_POINTS = {"itc": _itc_point, "ritc": _ritc_point, "ritm": _ritm_point, "mlm": _mlm_point, "rlm": _rlm_point}


def check_kernel(name: str, n_points: int = 100, seed: int = 0, h: float = STEP) -> CheckRow:
    t0 = time.perf_counter()
    worst = 0.0
    for p in range(n_points):
        rng = np.random.default_rng(derive_seed(seed, KERNELS.index(name), p))
        fn, inputs = _POINTS[name](rng)
        worst = max(worst, finite_diff_check(fn, inputs, h=h))
    return CheckRow(name, n_points, worst, time.perf_counter() - t0)


def check_composite(n_points: int = 100, seed: int = 0, coords: int = 12, h: float = STEP) -> CheckRow:
    """Summed toy-model objective with respect to model parameters.

    Each point is a freshly drawn tiny model and batch with the stochastic
    parts (masks, hard negatives, momentum features, queue) frozen. Checked
    coordinates are drawn among those whose analytic gradient exceeds 1e-5,
    below which central-difference round-off dominates the comparison.
    """
    import torch

    from .toymodel.corpus import default_toy_vocab, generate_toy_corpus
    from .toymodel.model import new_model
    from .toymodel.train import Switches, build_batch, compute_losses, sum_terms
    from .wordnet import load_wordnet, mini_wordnet_dir

    t0 = time.perf_counter()
    vocab = default_toy_vocab()
    graph = load_wordnet(mini_wordnet_dir())
    worst = 0.0
    done = 0
    attempt = 0
    while done < n_points:
        attempt += 1
        rng = np.random.default_rng(derive_seed(seed, 99, attempt))
        model = new_model(vocab, dim=8, proj_dim=4, ffn_dim=8, init_seed=derive_seed(seed, 98, attempt) % (2**31))
        gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
        with torch.no_grad():
            for p in model.parameters():
                p.add_(0.3 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
        train, _ = generate_toy_corpus(int(rng.integers(2**31)), 4, 1)
        batch = build_batch(train, [s.caption for s in train], vocab, graph, seed=int(rng.integers(2**31)), mask_rate=0.3)
        if len(batch.rw_rows) == 0:
            continue
        n = len(train)
        negatives = (
            np.array([(i + 1 + rng.integers(n - 1)) % n for i in range(n)]),
            np.array([(i + 1 + rng.integers(n - 1)) % n for i in range(n)]),
        )
        with torch.no_grad():
            vm = model.uni_m.project_image(model.uni_m.image(batch.symbols, batch.sym_mask)[1])
            tm = model.uni_m.project_text(model.uni_m.text(batch.ids, batch.mask)[1])
        qv, qt = _unit(rng, 6, 4), _unit(rng, 6, 4)
        sw = Switches(margin=float(rng.uniform(0.5, 2.0)))

        def loss():
            terms, _ = compute_losses(
                model, batch, sw, img_queue=qv, txt_queue=qt, negatives=negatives, momentum_feats=(vm, tm)
            )
            return sum_terms(terms), terms

        total, terms = loss()
        if terms["ritc"] is None or not _ritc_regular(model, batch, sw):
            continue
        model.zero_grad()
        total.backward()
        params = [(name, p) for name, p in model.named_parameters() if p.requires_grad]
        cands = [(k, i) for k, (_, p) in enumerate(params) for i in np.flatnonzero(np.abs(p.grad.numpy()) > 1e-5)]
        if not cands:
            continue
        picks = rng.choice(len(cands), size=min(coords, len(cands)), replace=False)
        with torch.no_grad():
            for c in picks:
                k, i = cands[c]
                p = params[k][1]
                flat = p.view(-1)
                a = float(p.grad.view(-1)[i])
                orig = float(flat[i])
                flat[i] = orig + h
                fp = float(loss()[0])
                flat[i] = orig - h
                fm = float(loss()[0])
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
        done += 1
    return CheckRow("composite", done, worst, time.perf_counter() - t0)


def _ritc_regular(model, batch, sw, gap: float = 1e-3) -> bool:
    """True when no RITC minimum is near-tied and no hinge sits near its kink."""
    import torch

    with torch.no_grad():
        uni = model.uni
        v_proj = uni.project_image(uni.image(batch.symbols, batch.sym_mask)[1])
        rows = torch.as_tensor(batch.rw_rows)
        w = uni.project_text(uni.text(batch.ids, batch.mask)[0])[rows]
        wh = uni.project_text(uni.text(batch.rw_ids, batch.rw_mask)[0])
        g = torch.einsum("bd,bld->bl", v_proj[rows], w).numpy()
        gh = torch.einsum("bd,bld->bl", v_proj[rows], wh).numpy()
    g = np.where(batch.word_mask[rows].numpy(), g, np.inf)
    gh = np.where(batch.rw_word_mask.numpy(), gh, np.inf)
    for s in (np.sort(g, 1), np.sort(gh, 1)):
        finite = np.isfinite(s[:, 1]) if s.shape[1] > 1 else np.zeros(len(s), bool)
        if np.any((s[:, 1] - s[:, 0])[finite] < gap):
            return False
    hinge = sw.margin + gh.min(1) - g.min(1)
    return bool(np.all(np.abs(hinge) > gap))


def run_all(n_points: int = 100, seed: int = 0, composite: bool = True) -> list[CheckRow]:
    rows = [check_kernel(name, n_points, seed) for name in KERNELS]
    if composite:
        rows.append(check_composite(n_points, seed))
    return rows
