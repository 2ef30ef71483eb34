"""Training objectives with analytic gradients, the momentum queue, in-batch
hard-negative sampling, and a central-difference gradient checker.

All kernels work in float64 numpy and return a :class:`LossResult` whose
``grads`` map input names to arrays of the input's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import (
    BatchTooSmall,
    DimensionMismatch,
    InvalidTarget,
    NonNormalizedInput,
    NoValidTokens,
    ShapeMismatch,
)
from .tokenizer import IGNORE_INDEX, MaskedSeq, RlmTarget

__all__ = [
    "COMPONENTS",
    "LossConfig",
    "LossResult",
    "LossBundle",
    "MomentumQueue",
    "itc_loss",
    "ritc_loss",
    "ritm_loss",
    "mlm_loss",
    "rlm_loss",
    "total_loss",
    "sample_hard_negatives",
    "momentum_step",
    "queue_push",
    "finite_diff_check",
]

COMPONENTS = ("itc", "ritc", "ritm", "mlm", "rlm")
NORM_TOL = 1e-6
MATCH, MISMATCH = 1, 0


@dataclass
class LossConfig:
    temperature: float = 0.07
    margin: float = 0.2
    queue_capacity: int = 256
    momentum: float = 0.995
    batch_size: int = 32
    ritc_paper_sign: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.queue_capacity < 0:
            raise ValueError("queue capacity must be non-negative")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")


@dataclass
class LossResult:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    parts: dict[str, float] = field(default_factory=dict)
    empty: bool = False


@dataclass
class LossBundle:
    itc: float | None
    ritc: float | None
    ritm: float | None
    mlm: float | None
    rlm: float | None
    total: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in COMPONENTS + ("total",)}


# -- helpers -----------------------------------------------------------------


def _f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def _check_unit(name: str, x: np.ndarray) -> None:
    if x.size == 0:
        return
    norms = np.linalg.norm(x, axis=-1)
    dev = np.max(np.abs(norms - 1.0))
    if dev > NORM_TOL:
        raise NonNormalizedInput(f"{name}: row norm deviates from 1 by {dev:.3g}")


# -- momentum queue ----------------------------------------------------------


class MomentumQueue:
    """Fixed-capacity FIFO of unit-norm embedding rows."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 0 or dim < 1:
            raise ValueError("capacity must be >= 0 and dim >= 1")
        self.capacity = capacity
        self.dim = dim
        self._buf = np.zeros((capacity, dim))
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, batch) -> None:
        batch = np.atleast_2d(_f64(batch))
        if batch.shape[1] != self.dim:
            raise ShapeMismatch(f"queue dim {self.dim}, batch dim {batch.shape[1]}")
        _check_unit("queue batch", batch)
        if self.capacity == 0:
            return
        for row in batch[-self.capacity :]:
            self._buf[self._cursor] = row
            self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + len(batch), self.capacity)

    def contents(self) -> np.ndarray:
        """Stored rows, oldest first."""
        if self._size < self.capacity:
            return self._buf[: self._size].copy()
        return np.concatenate([self._buf[self._cursor :], self._buf[: self._cursor]])

    def state(self) -> dict:
        return {"buf": self._buf.copy(), "cursor": self._cursor, "size": self._size}

    def load_state(self, state: Mapping) -> None:
        self._buf = np.array(state["buf"], dtype=np.float64)
        self._cursor = int(state["cursor"])
        self._size = int(state["size"])


def queue_push(queue: MomentumQueue, batch) -> None:
    queue.push(batch)


def _queue_array(queue, dim: int) -> np.ndarray:
    if queue is None:
        return np.zeros((0, dim))
    if isinstance(queue, MomentumQueue):
        return queue.contents()
    arr = _f64(queue)
    return arr.reshape(0, dim) if arr.size == 0 else np.atleast_2d(arr)


def momentum_step(params: Mapping, momentum_params: Mapping, m: float) -> dict:
    """Exponential moving average ``m * momentum + (1 - m) * online``.

    Works for any array type supporting arithmetic (numpy, torch).
    """
    if set(params) != set(momentum_params):
        raise ShapeMismatch("parameter names differ between online and momentum copies")
    out = {}
    for name, p in params.items():
        mp = momentum_params[name]
        if tuple(p.shape) != tuple(mp.shape):
            raise ShapeMismatch(f"{name}: {tuple(p.shape)} vs {tuple(mp.shape)}")
        out[name] = m * mp + (1.0 - m) * p
    return out


# -- image-text contrastive ----------------------------------------------------


def _contrastive_direction(anchors, cands, queue, tau):
    n = anchors.shape[0]
    pool = np.concatenate([cands, queue], axis=0)
    logits = anchors @ pool.T / tau
    logp = _log_softmax(logits)
    loss = -np.mean(logp[np.arange(n), np.arange(n)])
    g = np.exp(logp)
    g[np.arange(n), np.arange(n)] -= 1.0
    g /= n
    d_anchor = g @ pool / tau
    d_cands = (g.T @ anchors / tau)[:n]
    d_logtau = -np.sum(g * logits)
    return loss, d_anchor, d_cands, d_logtau


def itc_loss(
    text_proj,
    img_proj,
    img_queue=None,
    txt_queue=None,
    tau: float = 0.07,
    *,
    text_cand=None,
    img_cand=None,
    validate: bool = True,
) -> LossResult:
    """Symmetric InfoNCE over in-batch momentum candidates plus queued ones.

    ``text_cand``/``img_cand`` are the momentum-encoder features of the batch;
    when omitted the online features serve as their own candidates and the
    gradient includes both paths. Gradients are returned for anchors,
    candidates, and ``log_tau``.
    """
    t = np.atleast_2d(_f64(text_proj))
    v = np.atleast_2d(_f64(img_proj))
    if t.shape != v.shape:
        raise DimensionMismatch(f"text {t.shape} vs image {v.shape}")
    n, d = t.shape
    tc = t if text_cand is None else np.atleast_2d(_f64(text_cand))
    vc = v if img_cand is None else np.atleast_2d(_f64(img_cand))
    if tc.shape != t.shape or vc.shape != v.shape:
        raise DimensionMismatch("candidate shapes must match the anchors")
    qv = _queue_array(img_queue, d)
    qt = _queue_array(txt_queue, d)
    if qv.shape[1] != d or qt.shape[1] != d:
        raise DimensionMismatch("queue dimension differs from projection dimension")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if validate:
        for name, x in (("text_proj", t), ("img_proj", v), ("text_cand", tc),
                        ("img_cand", vc), ("img_queue", qv), ("txt_queue", qt)):
            _check_unit(name, x)

    l_t, d_t, d_vc, g_tau_t = _contrastive_direction(t, vc, qv, tau)
    l_v, d_v, d_tc, g_tau_v = _contrastive_direction(v, tc, qt, tau)
    grads = {"log_tau": np.array(g_tau_t + g_tau_v)}
    if text_cand is None:
        grads["text_proj"] = d_t + d_tc
    else:
        grads["text_proj"], grads["text_cand"] = d_t, d_tc
    if img_cand is None:
        grads["img_proj"] = d_v + d_vc
    else:
        grads["img_proj"], grads["img_cand"] = d_v, d_vc
    return LossResult(l_t + l_v, grads, parts={"t2i": l_t, "i2t": l_v})


# -- refined image-text contrastive -------------------------------------------


def _masked_min(g: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    filled = np.where(mask, g, np.inf)
    # argmin returns the lowest index among ties
    idx = np.argmin(filled, axis=-1)
    return filled[np.arange(len(g)), idx], idx


def ritc_loss(
    img_cls_proj,
    token_projs,
    rewritten_token_projs,
    valid_mask,
    margin: float = 0.2,
    rewritten_mask=None,
    *,
    paper_sign: bool = False,
) -> LossResult:
    """Hinge on the weakest image-token similarity of the true caption versus
    the rewritten one: ``max(0, margin + min(g_rewritten) - min(g_true))``.

    ``paper_sign=True`` swaps the two minima. Accepts a single instance
    (``D``, ``L x D``) or a batch (``B x D``, ``B x L x D``); batch loss is the
    mean over instances.
    """
    v = _f64(img_cls_proj)
    w = _f64(token_projs)
    wh = _f64(rewritten_token_projs)
    single = v.ndim == 1
    if single:
        v, w, wh = v[None], w[None], wh[None]
    mask = np.asarray(valid_mask, dtype=bool)
    mask_hat = mask if rewritten_mask is None else np.asarray(rewritten_mask, dtype=bool)
    if single:
        mask = mask.reshape(1, -1)
        mask_hat = mask_hat.reshape(1, -1)
    b, d = v.shape
    if w.shape[0] != b or wh.shape[0] != b or w.shape[2] != d or wh.shape[2] != d:
        raise DimensionMismatch("token projections do not match the image projection")
    if mask.shape != w.shape[:2] or mask_hat.shape != wh.shape[:2]:
        raise DimensionMismatch("valid mask shape does not match the token projections")
    if not mask.any(axis=1).all() or not mask_hat.any(axis=1).all():
        raise NoValidTokens("every instance needs at least one valid token on each side")

    g = np.einsum("bd,bld->bl", v, w)
    gh = np.einsum("bd,bld->bl", v, wh)
    min_g, ig = _masked_min(g, mask)
    min_gh, igh = _masked_min(gh, mask_hat)
    sign = -1.0 if paper_sign else 1.0
    hinge = margin + sign * (min_gh - min_g)
    active = hinge > 0
    value = float(np.mean(np.where(active, hinge, 0.0)))

    dv = np.zeros_like(v)
    dw = np.zeros_like(w)
    dwh = np.zeros_like(wh)
    scale = sign / b
    rows = np.flatnonzero(active)
    dv[rows] = scale * (wh[rows, igh[rows]] - w[rows, ig[rows]])
    dwh[rows, igh[rows]] = scale * v[rows]
    dw[rows, ig[rows]] = -scale * v[rows]
    if single:
        dv, dw, dwh = dv[0], dw[0], dwh[0]
    grads = {"img_cls_proj": dv, "token_projs": dw, "rewritten_token_projs": dwh}
    return LossResult(value, grads, parts={"min_g": float(np.mean(min_g)), "min_g_hat": float(np.mean(min_gh))})


# -- hard negatives ------------------------------------------------------------


def sample_hard_negatives(sim, seed: int, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """For ``sim[i, j] = image_i . text_j`` draw, per image, one non-matching
    text and, per text, one non-matching image with probability proportional
    to ``softmax(sim / temperature)`` over off-diagonal entries."""
    s = _f64(sim)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatch("similarity matrix must be square")
    n = s.shape[0]
    if n < 2:
        raise BatchTooSmall("hard negatives need a batch of at least 2")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)))
    logits = s / temperature
    np.fill_diagonal(logits, -np.inf)

    def draw(rows: np.ndarray) -> np.ndarray:
        p = np.exp(_log_softmax(rows))
        return np.array([rng.choice(n, p=p[i]) for i in range(n)], dtype=np.int64)

    neg_text_for_image = draw(logits)
    neg_image_for_text = draw(logits.T)
    return neg_text_for_image, neg_image_for_text


# -- refined image-text matching ------------------------------------------------


def ritm_loss(pos_logits, hardneg_logits, rewritten_logits=None) -> LossResult:
    """Mean two-way cross-entropy: positives labeled match, in-batch hard
    negatives and (image, rewritten caption) pairs labeled mismatch."""
    parts = {"pos_logits": np.atleast_2d(_f64(pos_logits)), "hardneg_logits": np.atleast_2d(_f64(hardneg_logits))}
    if rewritten_logits is not None:
        parts["rewritten_logits"] = _f64(rewritten_logits).reshape(-1, 2)
    for name, x in parts.items():
        if x.ndim != 2 or x.shape[1] != 2:
            raise DimensionMismatch(f"{name} must have shape (rows, 2), got {x.shape}")
    labels = {"pos_logits": MATCH, "hardneg_logits": MISMATCH, "rewritten_logits": MISMATCH}
    total_rows = sum(len(x) for x in parts.values())
    if total_rows == 0:
        raise DimensionMismatch("no logits given")
    value = 0.0
    grads = {}
    for name, x in parts.items():
        logp = _log_softmax(x)
        y = labels[name]
        value -= float(np.sum(logp[:, y]))
        g = np.exp(logp)
        g[:, y] -= 1.0
        grads[name] = g / total_rows
    return LossResult(value / total_rows, grads)


# -- masked / replaced language modeling ---------------------------------------


def mlm_loss(logits, masked) -> LossResult:
    """Mean cross-entropy over labeled positions. ``masked`` is a MaskedSeq or a
    label array using IGNORE_INDEX for unlabeled positions."""
    x = _f64(logits)
    labels = np.asarray(masked.mlm_labels if isinstance(masked, MaskedSeq) else masked, dtype=np.int64)
    if x.shape[:-1] != labels.shape:
        raise DimensionMismatch(f"logits {x.shape} vs labels {labels.shape}")
    sel = labels != IGNORE_INDEX
    grad = np.zeros_like(x)
    count = int(sel.sum())
    if count == 0:
        return LossResult(0.0, {"logits": grad}, empty=True)
    if labels[sel].max() >= x.shape[-1] or labels[sel].min() < 0:
        raise DimensionMismatch("label id outside the vocabulary")
    logp = _log_softmax(x[sel])
    rows = np.arange(count)
    value = -float(np.mean(logp[rows, labels[sel]]))
    g = np.exp(logp)
    g[rows, labels[sel]] -= 1.0
    grad[sel] = g / count
    return LossResult(value, {"logits": grad})


def rlm_loss(position_logits, target, valid_mask) -> LossResult:
    """``-log p(target)`` under a softmax restricted to valid positions.

    Single instance: ``position_logits`` of length L and an RlmTarget (or int).
    Batch: ``B x L`` logits with an integer array of positions.
    """
    x = _f64(position_logits)
    single = x.ndim == 1
    if isinstance(target, RlmTarget):
        pos = np.array([target.position])
    else:
        pos = np.atleast_1d(np.asarray(target, dtype=np.int64))
    mask = np.asarray(valid_mask, dtype=bool)
    if single:
        x, mask = x[None], mask.reshape(1, -1)
    b, length = x.shape
    if mask.shape != x.shape or pos.shape != (b,):
        raise DimensionMismatch("logits, mask and targets disagree in shape")
    if (pos < 0).any() or (pos >= length).any() or not mask[np.arange(b), pos].all():
        raise InvalidTarget("target position is not a valid token position")
    z = np.where(mask, x, -np.inf)
    logp = _log_softmax(z)
    value = -float(np.mean(logp[np.arange(b), pos]))
    g = np.where(mask, np.exp(logp), 0.0)
    g[np.arange(b), pos] -= 1.0
    g /= b
    return LossResult(value, {"position_logits": g[0] if single else g})


# -- combination -----------------------------------------------------------------


def total_loss(components: Mapping[str, LossResult | float | None]) -> LossBundle:
    """Unweighted sum of the present components; gradients add by name.

    Absent (ablated) components are reported as ``None``.
    """
    unknown = set(components) - set(COMPONENTS)
    if unknown:
        raise KeyError(f"unknown loss components: {sorted(unknown)}")
    values: dict[str, float | None] = {}
    grads: dict[str, np.ndarray] = {}
    total = 0.0
    for name in COMPONENTS:
        comp = components.get(name)
        if comp is None:
            values[name] = None
            continue
        if isinstance(comp, LossResult):
            values[name] = float(comp.value)
            for key, g in comp.grads.items():
                grads[key] = grads[key] + g if key in grads else np.array(g, dtype=np.float64)
        else:
            values[name] = float(comp)
        total += values[name]
    return LossBundle(**values, total=total, gradients=grads)


# -- verification ------------------------------------------------------------------


def finite_diff_check(
    loss_fn: Callable,
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-5,
    analytic: Mapping[str, np.ndarray] | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(inputs)`` returns a LossResult, a ``(value, grads)`` pair, or a
    bare float (then ``analytic`` must be supplied). The relative error per
    coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    ``max_coords`` limits the check to a random subset of coordinates per input.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}

    def value_of(res) -> float:
        if isinstance(res, LossResult):
            return float(res.value)
        if isinstance(res, tuple):
            return float(res[0])
        return float(res)

    if analytic is None:
        res = loss_fn(base)
        analytic = res.grads if isinstance(res, LossResult) else res[1]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in base.items():
        if name not in analytic:
            continue
        ana = np.asarray(analytic[name], dtype=np.float64).reshape(arr.shape)
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = rng.choice(arr.size, size=max_coords, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            fp = value_of(loss_fn(base))
            arr[idx] = orig - h
            fm = value_of(loss_fn(base))
            arr[idx] = orig
            num = (fp - fm) / (2 * h)
            a = ana[idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
