"""Dual-mode transformer encoder.

One set of weights serves both modes: offline mode runs full-context attention
over the ``T`` frames, online mode runs over the assembled chunk/look-ahead/
register sequence with the chunk-wise mask.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .layout import ChunkLayout, StreamConfig, assemble_online_input, build_layout, extract_frame_outputs
from .masks import build_offline_mask, build_online_mask


def sinusoidal_pe(t: int, d: int) -> np.ndarray:
    """Sine/cosine encoding of 0-based position ``t``: even dims sin, odd dims cos."""
    if t < 0:
        raise ValueError(f"position must be non-negative, got {t}")
    return sinusoidal_table(torch.tensor([t]), d, torch.float64)[0].numpy()


def sinusoidal_table(positions: torch.Tensor, d: int, dtype=torch.float32) -> torch.Tensor:
    """Rows of sinusoidal encodings; negative positions get an all-zero row."""
    pos = positions.to(torch.float64).clamp(min=0)[:, None]
    k = torch.arange(d, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, (2 * (k // 2)) / d)
    pe = torch.where(k % 2 == 0, torch.sin(angle), torch.cos(angle))
    pe = torch.where((positions < 0)[:, None], torch.zeros_like(pe), pe)
    return pe.to(dtype)


@dataclass(frozen=True)
class MaskingPlan:
    """Time steps replaced by the mask embedding in one utterance."""

    T: int
    indices: tuple[int, ...]
    mask_prob: float = 0.0
    span: int = 0

    def __post_init__(self):
        bad = [t for t in self.indices if not 0 <= t < self.T]
        if bad:
            raise ValueError(f"masked indices {bad} outside [0, {self.T})")
        object.__setattr__(self, "indices", tuple(sorted(set(int(t) for t in self.indices))))

    def __len__(self):
        return len(self.indices)

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.T, dtype=bool)
        out[list(self.indices)] = True
        return out


def apply_time_mask(frames, plan: MaskingPlan, mask_embedding):
    """Replace rows ``t`` in ``plan`` with ``mask_embedding``; other rows pass through."""
    x = torch.as_tensor(frames)
    if x.shape[-2] != plan.T:
        raise ValueError(f"plan is for T={plan.T}, frames have {x.shape[-2]} rows")
    sel = torch.from_numpy(plan.as_bool())[:, None]
    emb = torch.as_tensor(mask_embedding, dtype=x.dtype)
    out = torch.where(sel, emb, x)
    return out.numpy() if isinstance(frames, np.ndarray) else out


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block with a GELU feed-forward."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.norm1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff1 = nn.Linear(d_model, d_ff)
        self.ff2 = nn.Linear(d_ff, d_model)

    def project(self, h: torch.Tensor):
        """Queries, keys, values of shape ``(..., heads, S, head_dim)``."""
        q, k, v = self.qkv(self.norm1(h)).chunk(3, dim=-1)
        split = lambda z: z.unflatten(-1, (self.n_heads, self.head_dim)).transpose(-3, -2)
        return split(q), split(k), split(v)

    def attend(self, h, q, k, v, mask: torch.Tensor) -> torch.Tensor:
        """Finish the block for rows ``h`` given their queries and the visible keys/values."""
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim) + mask
        ctx = torch.softmax(scores, dim=-1) @ v
        h = h + self.out(ctx.transpose(-3, -2).flatten(-2))
        return h + self.ff2(F.gelu(self.ff1(self.norm2(h))))

    def forward(self, h, mask):
        q, k, v = self.project(h)
        return self.attend(h, q, k, v, mask)


@dataclass
class DualOutput:
    y_off: torch.Tensor
    y_on: torch.Tensor
    registers: torch.Tensor  # (..., N, R, d)
    layout: ChunkLayout
    masked_input: torch.Tensor


class DualModeEncoder(nn.Module):
    """Transformer encoder with learned mask, pad and online-register embeddings.

    Args:
        d_model: model width.
        n_layers: number of encoder blocks (0 is allowed).
        n_heads: attention heads per block.
        d_ff: feed-forward width, defaults to ``4 * d_model``.
        n_registers: online registers appended to every chunk.
        input_dim: if set, frames of this width go through a learned linear
            projection to ``d_model``; otherwise frames must already be ``d_model`` wide.
        final_norm: close the (non-empty) layer stack with a LayerNorm.
        seed: seed for the deterministic initialization.
    """

    def __init__(
        self,
        d_model: int,
        n_layers: int = 2,
        n_heads: int = 1,
        d_ff: Optional[int] = None,
        n_registers: int = 1,
        input_dim: Optional[int] = None,
        final_norm: bool = True,
        seed: int = 0,
    ):
        super().__init__()
        self.d_model = d_model
        self.n_registers = n_registers
        self.input_dim = input_dim
        self.input_proj = nn.Linear(input_dim, d_model) if input_dim is not None else None
        self.layers = nn.ModuleList(EncoderLayer(d_model, n_heads, d_ff or 4 * d_model) for _ in range(n_layers))
        # Closing norm of a pre-norm stack; an empty stack has none.
        self.final_norm = nn.LayerNorm(d_model) if n_layers and final_norm else None
        self.mask_embedding = nn.Parameter(torch.empty(d_model))
        self.pad_embedding = nn.Parameter(torch.empty(d_model))
        self.register_embeddings = nn.Parameter(torch.empty(n_registers, d_model))
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Linear):
                    bound = 1.0 / math.sqrt(module.in_features)
                    module.weight.copy_(torch.rand(module.weight.shape, generator=gen) * 2 * bound - bound)
                    module.bias.zero_()
                elif isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)
                    module.bias.zero_()
            self.mask_embedding.copy_(0.02 * torch.randn(self.d_model, generator=gen))
            self.register_embeddings.copy_(0.02 * torch.randn(self.n_registers, self.d_model, generator=gen))
            self.pad_embedding.zero_()

    @property
    def dtype(self) -> torch.dtype:
        return self.mask_embedding.dtype

    def embed(self, frames) -> torch.Tensor:
        x = torch.as_tensor(frames, dtype=self.dtype)
        if self.input_proj is not None:
            return self.input_proj(x)
        if x.shape[-1] != self.d_model:
            raise ValueError(f"frames have width {x.shape[-1]}, encoder expects {self.d_model}")
        return x

    def positional(self, positions) -> torch.Tensor:
        return sinusoidal_table(torch.as_tensor(positions), self.d_model, self.dtype)

    def encode(self, inputs, mask, positions) -> torch.Tensor:
        """Run the layer stack on already-embedded rows.

        Args:
            inputs: ``(..., S, d_model)``.
            mask: ``(S, S)`` additive mask (0 / -inf).
            positions: ``(S,)`` positional index per row, -1 for none.
        """
        h = torch.as_tensor(inputs, dtype=self.dtype)
        if not torch.isfinite(h).all():
            raise ValueError("encoder input contains NaN or infinite values")
        mask = torch.as_tensor(mask, dtype=self.dtype)
        if mask.shape != (h.shape[-2], h.shape[-2]):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match {h.shape[-2]} input rows")
        h = h + self.positional(positions)
        for layer in self.layers:
            h = layer(h, mask)
        return self.finish(h)

    def finish(self, h: torch.Tensor) -> torch.Tensor:
        return h if self.final_norm is None else self.final_norm(h)

    def encode_offline(self, frames) -> torch.Tensor:
        h = self.embed(frames)
        T = h.shape[-2]
        return self.encode(h, build_offline_mask(T), np.arange(T))

    def encode_online(self, frames, C: int, L: int = 0):
        """Full-sequence masked forward. Returns ``(frame outputs, registers (..., N, R, d), layout)``."""
        h = self.embed(frames)
        config = StreamConfig(T=h.shape[-2], C=C, L=L, R=self.n_registers, d=self.d_model)
        return self._online(h, config)

    def _online(self, h, config: StreamConfig):
        assembled, layout = assemble_online_input(h, config, self.register_embeddings, self.pad_embedding)
        out = self.encode(assembled, build_online_mask(layout), layout.positions)
        y = extract_frame_outputs(out, layout)
        pos = torch.from_numpy(layout.register_positions.reshape(-1))
        regs = out.index_select(-2, pos).unflatten(-2, (config.n_chunks, config.R))
        return y, regs, layout

    def encode_dual(self, frames, plans: Sequence[Optional[MaskingPlan]] | MaskingPlan | None, config: StreamConfig) -> DualOutput:
        """Offline and online forward over the same time-masked frames.

        ``plans`` holds one :class:`MaskingPlan` per utterance (or a single plan
        for an unbatched ``(T, d)`` input).
        """
        h = self.embed(frames)
        if config.d != self.d_model or config.R != self.n_registers or config.T != h.shape[-2]:
            raise ValueError(
                f"config (T={config.T}, d={config.d}, R={config.R}) does not match input/encoder "
                f"(T={h.shape[-2]}, d={self.d_model}, R={self.n_registers})"
            )
        h = _mask_batch(h, plans, self.mask_embedding)
        y_off = self.encode(h, build_offline_mask(config.T), np.arange(config.T))
        y_on, regs, layout = self._online(h, config)
        return DualOutput(y_off=y_off, y_on=y_on, registers=regs, layout=layout, masked_input=h)


def _mask_batch(h, plans, mask_embedding):
    if plans is None:
        return h
    if isinstance(plans, MaskingPlan):
        return apply_time_mask(h, plans, mask_embedding)
    if h.dim() != 3 or len(plans) != h.shape[0]:
        raise ValueError(f"need one masking plan per utterance, got {len(plans)} for input {tuple(h.shape)}")
    rows = [h[b] if p is None else apply_time_mask(h[b], p, mask_embedding) for b, p in enumerate(plans)]
    return torch.stack(rows)
