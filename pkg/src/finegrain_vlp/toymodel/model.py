"""Tiny image/text encoders with a single fusion block, in float64 torch.

The loss kernels in :mod:`finegrain_vlp.losses` carry their own analytic
gradients; :func:`kernel_loss` plugs them into autograd so the encoder
backward passes come from torch while the objectives stay hand-derived.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..errors import VocabMismatch
from ..losses import momentum_step
from ..tokenizer import TokenSeq, Vocab
from .corpus import MAX_GROUPS, N_SYMBOLS, ToyScene

DTYPE = torch.float64


def vocab_fingerprint(vocab: Vocab) -> str:
    return hashlib.sha1("\n".join(vocab.tokens).encode("utf-8")).hexdigest()[:16]


@dataclass
class ModelConfig:
    vocab_size: int
    dim: int = 64
    proj_dim: int = 32
    ffn_dim: int = 128
    max_len: int = 30
    n_symbols: int = N_SYMBOLS
    tau_init: float = 0.07
    vocab_hash: str = ""
    init_seed: int = 0
    separate_ritm_heads: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class _Kernel(torch.autograd.Function):
    @staticmethod
    def forward(ctx, fn, *xs):
        value, grads = fn(*[x.detach().cpu().numpy() for x in xs])
        ctx.grads = [torch.as_tensor(np.asarray(g, dtype=np.float64).reshape(x.shape)) for g, x in zip(grads, xs)]
        return torch.tensor(float(value), dtype=DTYPE)

    @staticmethod
    def backward(ctx, gout):
        return (None, *[gout * g for g in ctx.grads])


def kernel_loss(fn, *xs: torch.Tensor) -> torch.Tensor:
    """Scalar tensor from ``fn(*numpy_inputs) -> (value, [grad per input])``."""
    return _Kernel.apply(fn, *xs)


def _attend(q, k, v, key_mask):
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    scores = scores.masked_fill(~key_mask[:, None, :], -1e30)
    return torch.softmax(scores, dim=-1) @ v


class Attention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, ctx, ctx_mask):
        return self.o(_attend(self.q(x), self.k(ctx), self.v(ctx), ctx_mask))


class FusionBlock(nn.Module):
    """Text self-attention, then cross-attention over visual tokens, then a
    feed-forward layer; each sublayer residual and layer-normalized."""

    def __init__(self, dim: int, ffn_dim: int):
        super().__init__()
        self.self_attn = Attention(dim)
        self.cross_attn = Attention(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))
        self.ln1 = nn.LayerNorm(dim)
        self.ln2 = nn.LayerNorm(dim)
        self.ln3 = nn.LayerNorm(dim)

    def forward(self, text, text_mask, image, image_mask):
        x = self.ln1(text + self.self_attn(text, text, text_mask))
        x = self.ln2(x + self.cross_attn(x, image, image_mask))
        return self.ln3(x + self.ffn(x))


class UniModal(nn.Module):
    """Per-token image and text encoders plus their projection heads; this is
    the part mirrored by the momentum copy."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.vis_emb = nn.Embedding(cfg.n_symbols, cfg.dim)
        self.vis_lin = nn.Linear(cfg.dim, cfg.dim)
        self.txt_emb = nn.Embedding(cfg.vocab_size, cfg.dim)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.max_len, cfg.dim, dtype=DTYPE))
        self.txt_lin = nn.Linear(cfg.dim, cfg.dim)
        self.h_v = nn.Linear(cfg.dim, cfg.proj_dim)
        self.h_w = nn.Linear(cfg.dim, cfg.proj_dim)

    def image(self, symbols, mask):
        """Visual token states and the mean-pooled [CLS] state."""
        states = torch.tanh(self.vis_lin(self.vis_emb(symbols)))
        w = mask.to(DTYPE)[..., None]
        cls = (states * w).sum(1) / w.sum(1).clamp_min(1.0)
        return states, cls

    def text(self, ids, mask):
        """Token states; the [CLS] state is the mean over non-pad positions."""
        states = torch.tanh(self.txt_lin(self.txt_emb(ids) + self.pos_emb[: ids.shape[1]]))
        w = mask.to(DTYPE)[..., None]
        cls = (states * w).sum(1) / w.sum(1).clamp_min(1.0)
        return states, cls

    def project_image(self, cls):
        return nn.functional.normalize(self.h_v(cls), dim=-1)

    def project_text(self, x):
        return nn.functional.normalize(self.h_w(x), dim=-1)


class ToyEncoders(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.init_seed)
        self.uni = UniModal(cfg)
        self.fusion = FusionBlock(cfg.dim, cfg.ffn_dim)
        self.itm_head = nn.Linear(cfg.dim, 2)
        # optional second matching head scoring (image, rewritten caption) pairs
        self.itm_head_rw = nn.Linear(cfg.dim, 2) if cfg.separate_ritm_heads else None
        self.mlm_head = nn.Linear(cfg.dim, cfg.vocab_size)
        self.rlm_head = nn.Linear(cfg.dim, 1)
        self.log_tau = nn.Parameter(torch.tensor(math.log(cfg.tau_init), dtype=DTYPE))
        self.to(DTYPE)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name == "log_tau":
                    continue
                if ".ln" in name and name.endswith("weight"):
                    p.fill_(1.0)
                elif p.dim() == 1 or name.startswith("rlm_head"):
                    # a zero position head scores every token alike until trained
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=DTYPE) * (1.0 / math.sqrt(p.shape[-1])))
        self.uni_m = copy.deepcopy(self.uni)
        for p in self.uni_m.parameters():
            p.requires_grad_(False)

    @property
    def tau(self) -> float:
        return float(torch.exp(self.log_tau.detach()))

    def fuse(self, text_states, text_mask, image_states, image_mask):
        return self.fusion(text_states, text_mask, image_states, image_mask)

    def itm_logits(self, fused, text_mask, rewritten: bool = False):
        w = text_mask.to(DTYPE)[..., None]
        pooled = (fused * w).sum(1) / w.sum(1).clamp_min(1.0)
        head = self.itm_head_rw if rewritten and self.itm_head_rw is not None else self.itm_head
        return head(pooled)

    def rlm_logits(self, fused):
        return self.rlm_head(fused).squeeze(-1)

    @torch.no_grad()
    def update_momentum(self, m: float) -> None:
        online = dict(self.uni.named_parameters())
        mom = dict(self.uni_m.named_parameters())
        for name, value in momentum_step(online, mom, m).items():
            mom[name].copy_(value)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}

    def load_arrays(self, arrays) -> None:
        self.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in arrays.items()})


def new_model(vocab: Vocab, **kwargs) -> ToyEncoders:
    cfg = ModelConfig(vocab_size=len(vocab), vocab_hash=vocab_fingerprint(vocab), **kwargs)
    return ToyEncoders(cfg)


def pad_symbols(scenes) -> tuple[torch.Tensor, torch.Tensor]:
    sym = np.zeros((len(scenes), MAX_GROUPS), dtype=np.int64)
    mask = np.zeros((len(scenes), MAX_GROUPS), dtype=bool)
    for i, s in enumerate(scenes):
        sym[i, : len(s.visual_tokens)] = s.visual_tokens
        mask[i, : len(s.visual_tokens)] = True
    return torch.as_tensor(sym), torch.as_tensor(mask)


def pad_ids(seqs, pad_id: int, length: int | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    length = max(len(s) for s in seqs) if length is None else length
    ids = np.full((len(seqs), length), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return torch.as_tensor(ids), torch.as_tensor(mask)


@dataclass
class PairEncoding:
    image_states: torch.Tensor
    image_proj: torch.Tensor
    text_states: torch.Tensor
    text_proj: torch.Tensor
    token_projs: torch.Tensor
    fused: torch.Tensor


@torch.no_grad()
def encode_pair(model: ToyEncoders, scene: ToyScene, token_seq: TokenSeq, vocab: Vocab | None = None) -> PairEncoding:
    """Uni-modal representations and multimodal token states for one pair."""
    if vocab is not None and vocab_fingerprint(vocab) != model.cfg.vocab_hash:
        raise VocabMismatch("token sequence vocabulary differs from the model's")
    if max(token_seq.ids) >= model.cfg.vocab_size or len(token_seq.ids) > model.cfg.max_len:
        raise VocabMismatch("token ids or length outside the model's vocabulary")
    sym, smask = pad_symbols([scene])
    ids, tmask = pad_ids([token_seq.ids], 0)
    v_states, v_cls = model.uni.image(sym, smask)
    t_states, t_cls = model.uni.text(ids, tmask)
    fused = model.fuse(t_states, tmask, v_states, smask)
    return PairEncoding(
        image_states=v_states[0],
        image_proj=model.uni.project_image(v_cls)[0],
        text_states=t_states[0],
        text_proj=model.uni.project_text(t_cls)[0],
        token_projs=model.uni.project_text(t_states)[0],
        fused=fused[0],
    )
