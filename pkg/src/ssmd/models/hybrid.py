"""Hybrid non-causal / causal micro-transformer.

A stack of any-to-any attention blocks produces per-position hidden states
and factorized draft logits, exactly like a masked-denoising transformer.
A small causal stack then runs over the sequence permuted into generation
order: the track at ordering rank ``j`` predicts the token at rank ``j+1``,
receiving

* the token embedding of the (true or drafted) token at rank ``j``,
* positional encodings (second table) for both the current position and the
  next position in the ordering,
* the non-causal hidden states of both positions, concatenated and
  projected.

The causal output logits for rank ``j+1`` add the non-causal logits of that
position as a residual, so the autoregressive rows can only sharpen the
factorized ones.  The causal head and the causal blocks' output projections
are zero-initialized, which makes the causal rows *exactly* equal to the
draft rows at step 0.  The first masked slot has no extra context, so its
causal distribution is defined to be the draft distribution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import RevealState, SequenceSpec
from .base import HiddenCache, Model


@dataclass(frozen=True)
class HybridConfig:
    embed_dim: int = 48
    n_heads: int = 4
    nc_layers: int = 2
    c_layers: int = 1
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.c_layers < 1:
            raise ValueError("need at least one causal layer")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=2)
        shape = (B, T, self.n_heads, C // self.n_heads)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(q.shape[-1])
        if causal:
            mask = torch.ones(T, T, dtype=torch.bool, device=x.device).tril()
            att = att.masked_fill(~mask, float("-inf"))
        att = att.softmax(dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, C)
        return self.out(y)


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, n_heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.ln2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_ratio * dim)
        self.fc2 = nn.Linear(mlp_ratio * dim, dim)

    def forward(self, x: torch.Tensor, causal: bool) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), causal)
        x = x + self.fc2(F.gelu(self.fc1(self.ln2(x))))
        return x


class HybridNet(nn.Module):
    def __init__(self, spec: SequenceSpec, cfg: HybridConfig, seed: int = 0):
        super().__init__()
        self.spec = spec
        self.cfg = cfg
        dim = cfg.embed_dim
        self.tok_emb = nn.Embedding(spec.S + 1, dim)
        self.pos_nc = nn.Embedding(spec.D, dim)
        self.pos_c = nn.Embedding(spec.D, dim)
        # Separate table for the position being predicted; a shared table
        # would make (current, next) position pairs order-ambiguous.
        self.pos_q = nn.Embedding(spec.D, dim)
        self.nc_blocks = nn.ModuleList(
            Block(dim, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.nc_layers)
        )
        self.ln_nc = nn.LayerNorm(dim)
        self.head_nc = nn.Linear(dim, spec.S)
        self.inj = nn.Linear(2 * dim, dim)
        self.c_blocks = nn.ModuleList(
            Block(dim, cfg.n_heads, cfg.mlp_ratio) for _ in range(cfg.c_layers)
        )
        self.ln_c = nn.LayerNorm(dim)
        self.head_c = nn.Linear(dim, spec.S)
        self.double()
        self._init_weights(seed)

    def _init_weights(self, seed: int):
        g = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if p.dim() >= 2:
                nn.init.normal_(p, mean=0.0, std=0.02, generator=g)
            else:
                nn.init.zeros_(p)
        for name, p in self.named_parameters():
            if "ln" in name and name.endswith("weight"):
                nn.init.ones_(p)
        # Zero the causal output paths: at step 0 the causal rows reduce to
        # the non-causal residual, i.e. target == draft exactly.
        nn.init.zeros_(self.head_c.weight)
        for blk in self.c_blocks:
            nn.init.zeros_(blk.attn.out.weight)
            nn.init.zeros_(blk.fc2.weight)

    def causal_param_names(self) -> set[str]:
        """Parameters belonging to the causal head/stack (phi)."""
        prefixes = ("pos_c.", "pos_q.", "inj.", "c_blocks.", "ln_c.", "head_c.")
        return {n for n, _ in self.named_parameters() if n.startswith(prefixes)}

    # -- forward passes ----------------------------------------------------

    def noncausal(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(hidden (B,D,h), logits (B,D,S)) from mask-substituted tokens."""
        x = self.tok_emb(tokens) + self.pos_nc.weight[None, :, :]
        for blk in self.nc_blocks:
            x = blk(x, causal=False)
        h = self.ln_nc(x)
        return h, self.head_nc(h)

    def causal_logits(
        self,
        h: torch.Tensor,
        nc_logits: torch.Tensor,
        ctok: torch.Tensor,
        perm: torch.Tensor,
    ) -> torch.Tensor:
        """Causal logits indexed by ordering rank, shape (B, D, S).

        ``ctok[b, j]`` is the token occupying rank ``j`` (true during
        training, drafted during verification).  Rank 0 carries the
        non-causal logits of its position (draft == target there).
        """
        B, D = ctok.shape
        idx = perm.unsqueeze(-1).expand(-1, -1, h.shape[-1])
        nxt = torch.cat([perm[:, 1:], perm[:, -1:]], dim=1)
        idx_n = nxt.unsqueeze(-1).expand(-1, -1, h.shape[-1])
        h_cur = h.gather(1, idx)
        h_nxt = h.gather(1, idx_n)
        u = (
            self.tok_emb(ctok)
            + self.pos_c(perm)
            + self.pos_q(nxt)
            + self.inj(torch.cat([h_cur, h_nxt], dim=-1))
        )
        for blk in self.c_blocks:
            u = blk(u, causal=True)
        pred = self.head_c(self.ln_c(u))
        nc_perm = nc_logits.gather(1, perm.unsqueeze(-1).expand(-1, -1, nc_logits.shape[-1]))
        out = torch.empty_like(nc_perm)
        out[:, 0] = nc_perm[:, 0]
        out[:, 1:] = pred[:, :-1] + nc_perm[:, 1:]
        return out


class HybridModel(Model):
    """Numpy-facing adapter implementing the draft/target interface."""

    def __init__(self, spec: SequenceSpec, cfg: HybridConfig | None = None, seed: int = 0,
                 net: HybridNet | None = None):
        super().__init__()
        self.spec = spec
        self.cfg = cfg or HybridConfig()
        self.net = net if net is not None else HybridNet(spec, self.cfg, seed=seed)
        self.nc_blocks = self.cfg.nc_layers
        self.c_blocks = self.cfg.c_layers

    def draft_pass(self, state: RevealState, horizon: int) -> tuple[np.ndarray, HiddenCache]:
        i = state.revealed_count
        if not 1 <= horizon <= self.spec.D - i:
            raise ValueError(f"bad horizon {horizon} with {i} revealed")
        self.draft_pass_count += 1
        with torch.no_grad():
            tokens = torch.from_numpy(state.seq).unsqueeze(0)
            h, nc_logits = self.net.noncausal(tokens)
            if not torch.isfinite(h).all():
                raise FloatingPointError("non-finite activations in non-causal stack")
            perm = state.ordering.perm
            slots = torch.from_numpy(perm[i : i + horizon])
            rows = nc_logits[0, slots].softmax(dim=-1).numpy()
        cache = HiddenCache(state=state, payload=(h, nc_logits))
        return rows, cache

    def target_rows(
        self, cache: HiddenCache, drafted: np.ndarray, start: int, stop: int
    ) -> np.ndarray:
        self._check_span(cache, drafted, start, stop)
        self.target_pass_count += 1
        state = cache.state
        i = state.revealed_count
        D = self.spec.D
        h, nc_logits = cache.payload
        perm = state.ordering.perm
        ctok = np.full(D, self.spec.mask_id, dtype=np.int64)
        ctok[:i] = state.seq[perm[:i]]
        n_known = min(len(drafted), D - i)
        ctok[i : i + n_known] = drafted[:n_known]
        with torch.no_grad():
            logits = self.net.causal_logits(
                h,
                nc_logits,
                torch.from_numpy(ctok).unsqueeze(0),
                torch.from_numpy(perm).unsqueeze(0),
            )
            if not torch.isfinite(logits[0, start:stop]).all():
                raise FloatingPointError("non-finite activations in causal stack")
            rows = logits[0, start:stop].softmax(dim=-1).numpy()
        if start == i:
            # First masked slot: defined as the draft distribution.
            rows[0] = nc_logits[0, perm[i]].softmax(dim=-1).numpy()
        return rows
