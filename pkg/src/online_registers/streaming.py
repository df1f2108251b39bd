"""Chunk-by-chunk inference with per-layer key/value caching.

Each push runs ``[chunk_i, lookahead_i, registers_i]`` through the encoder,
attending to the cached keys/values of all earlier chunk frames. Only the
chunk-frame keys/values are committed; look-ahead and register rows are
recomputed on every step. This reproduces the full-sequence online forward:
a committed chunk frame only ever attended to earlier chunks plus its own
chunk's look-ahead and registers, which is exactly what was visible when it
was computed here.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import torch

from ._validation import check_nonneg_int, check_positive_int
from .encoder import DualModeEncoder


class ChunkSpec(NamedTuple):
    C: int
    L: int
    R: int
    frame_ms: float = 20.0


class LatencyReport(NamedTuple):
    chunk_ms: float
    with_lookahead_ms: float


def latency_report(C: int, L: int = 0, frame_ms: float = 20.0) -> LatencyReport:
    """Algorithmic latency of one chunk: its duration, and duration plus the look-ahead wait."""
    check_positive_int(C, "C")
    check_nonneg_int(L, "L")
    return LatencyReport(C * frame_ms, (C + L) * frame_ms)


@dataclass
class StreamState:
    encoder: DualModeEncoder
    spec: ChunkSpec
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    frames_consumed: int = 0
    next_chunk: int = 0
    finalized: bool = False

    @property
    def cached_rows(self) -> int:
        return 0 if not self.keys or self.keys[0] is None else self.keys[0].shape[-2]

    @property
    def cache_bytes(self) -> int:
        return sum(t.numel() * t.element_size() for t in self.keys + self.values if t is not None)


def open_stream(encoder: DualModeEncoder, C: int, L: int = 0, frame_ms: float = 20.0) -> StreamState:
    check_positive_int(C, "C")
    check_nonneg_int(L, "L")
    n = len(encoder.layers)
    return StreamState(encoder=encoder, spec=ChunkSpec(C, L, encoder.n_registers, frame_ms), keys=[None] * n, values=[None] * n)


def _pad_rows(x: torch.Tensor, n: int, pad: torch.Tensor) -> torch.Tensor:
    if n == 0:
        return x
    fill = pad.expand(*x.shape[:-2], n, pad.shape[-1])
    return torch.cat([x, fill], dim=-2)


@torch.no_grad()
def _step(state: StreamState, chunk, lookahead, commit: bool):
    enc = state.encoder
    C, L, R, _ = state.spec
    x_c = enc.embed(chunk)
    x_l = enc.embed(lookahead)
    n_real, n_la = x_c.shape[-2], x_l.shape[-2]
    lead = x_c.shape[:-2]
    t0 = state.next_chunk * C

    regs = enc.register_embeddings.expand(*lead, R, enc.d_model)
    x = torch.cat([_pad_rows(x_c, C - n_real, enc.pad_embedding), _pad_rows(x_l, L - n_la, enc.pad_embedding), regs], dim=-2)
    positions = torch.cat([torch.arange(t0, t0 + C + L), torch.full((R,), -1)])
    visible = torch.cat([torch.arange(C) < n_real, torch.arange(L) < n_la, torch.ones(R, dtype=torch.bool)])
    new_mask = torch.zeros(len(visible), dtype=enc.dtype).masked_fill(~visible, float("-inf"))
    mask = torch.cat([torch.zeros(state.cached_rows, dtype=enc.dtype), new_mask]).expand(len(visible), -1)

    if not torch.isfinite(x).all():
        raise ValueError("stream input contains NaN or infinite values")
    h = x + enc.positional(positions)
    for li, layer in enumerate(enc.layers):
        q, k, v = layer.project(h)
        past_k, past_v = state.keys[li], state.values[li]
        k_all = k if past_k is None else torch.cat([past_k, k], dim=-2)
        v_all = v if past_v is None else torch.cat([past_v, v], dim=-2)
        h = layer.attend(h, q, k_all, v_all, mask)
        if commit:
            state.keys[li] = k_all[..., : k_all.shape[-2] - (L + R), :]
            state.values[li] = v_all[..., : v_all.shape[-2] - (L + R), :]

    h = enc.finish(h)
    state.next_chunk += 1
    state.frames_consumed += n_real
    return h[..., :n_real, :], h[..., C + L :, :]


def push_chunk(state: StreamState, chunk, lookahead=None):
    """Encode one full chunk of ``C`` frames with up to ``L`` look-ahead frames.

    Fewer than ``L`` look-ahead rows means the utterance ends inside the
    look-ahead window; the missing slots become pads.

    Returns:
        ``(frame outputs (C, d), register outputs (R, d))``.
    """
    if state.finalized:
        raise RuntimeError("stream already finalized")
    C, L = state.spec.C, state.spec.L
    chunk = torch.as_tensor(chunk)
    if chunk.shape[-2] != C:
        raise ValueError(f"push_chunk needs exactly {C} frames, got {chunk.shape[-2]}; use finalize for a partial chunk")
    if lookahead is None:
        lookahead = chunk[..., :0, :]
    lookahead = torch.as_tensor(lookahead)
    if lookahead.shape[-2] > L:
        raise ValueError(f"at most {L} look-ahead frames allowed, got {lookahead.shape[-2]}")
    return _step(state, chunk, lookahead, commit=True)


def finalize(state: StreamState, trailing=None):
    """Flush a final partial chunk (fewer than ``C`` frames) and close the stream.

    Returns outputs for the real trailing frames only; empty when there are none.
    """
    if state.finalized:
        raise RuntimeError("stream already finalized")
    C = state.spec.C
    enc = state.encoder
    if trailing is None:
        trailing = torch.zeros(0, enc.input_dim or enc.d_model, dtype=enc.dtype)
    trailing = torch.as_tensor(trailing)
    if trailing.shape[-2] >= C:
        raise ValueError(f"finalize takes fewer than {C} trailing frames, got {trailing.shape[-2]}")
    if trailing.shape[-2] == 0:
        state.finalized = True
        lead = trailing.shape[:-2]
        empty = torch.zeros(*lead, 0, enc.d_model, dtype=enc.dtype)
        return empty, torch.zeros(*lead, 0, enc.d_model, dtype=enc.dtype)
    out = _step(state, trailing, trailing[..., :0, :], commit=False)
    state.finalized = True
    return out


def stream_encode(encoder: DualModeEncoder, frames, C: int, L: int = 0):
    """Drive a stream over a whole ``(T, d)`` matrix, feeding each chunk only the frames it may see.

    Returns:
        ``(frame outputs (T, d), register outputs (N, R, d))``.
    """
    frames = torch.as_tensor(frames)
    T = frames.shape[-2]
    state = open_stream(encoder, C, L)
    outs, regs = [], []
    n_full = T // C
    for i in range(n_full):
        start = i * C
        y, u = push_chunk(state, frames[..., start : start + C, :], frames[..., start + C : start + C + L, :])
        outs.append(y)
        regs.append(u)
    y, u = finalize(state, frames[..., n_full * C :, :])
    if y.shape[-2]:
        outs.append(y)
        regs.append(u)
    return torch.cat(outs, dim=-2), torch.stack(regs, dim=-3)


@torch.no_grad()
def recompute_encode(encoder: DualModeEncoder, frames, C: int, L: int = 0):
    """Cache-free reference: re-encode the visible prefix from scratch for every chunk.

    For chunk ``i`` the prefix is ``frames[: (i + 1) * C + L]`` assembled with
    its own look-ahead and registers, so earlier chunks are rebuilt exactly as
    they were seen at their own time.
    """
    frames = torch.as_tensor(frames)
    T = frames.shape[-2]
    outs, regs = [], []
    for i in range(-(-T // C)):
        stop = min(T, (i + 1) * C + L)
        y, u, _ = encoder.encode_online(frames[..., :stop, :], C, L)
        outs.append(y[..., i * C : min(T, (i + 1) * C), :])
        regs.append(u[..., i, :, :])
    return torch.cat(outs, dim=-2), torch.stack(regs, dim=-3)


class BenchRow(NamedTuple):
    C: int
    L: int
    latency_ms: float
    with_lookahead_ms: float
    ms_per_chunk: float
    cache_bytes: int


def benchmark(encoder: DualModeEncoder, chunks=(8, 16, 32), L: int = 0, n_chunks: int = 8, frame_ms: float = 20.0,
              seed: int = 0, repeats: int = 3) -> list[BenchRow]:
    """Time chunk-by-chunk streaming on random frames, one row per chunk size.

    ``ms_per_chunk`` is the best of ``repeats`` runs; ``cache_bytes`` is the
    cache size after the last chunk.
    """
    gen = torch.Generator().manual_seed(seed)
    rows = []
    for C in chunks:
        lat = latency_report(C, L, frame_ms)
        frames = torch.randn(n_chunks * C + L, encoder.input_dim or encoder.d_model, generator=gen, dtype=encoder.dtype)
        best = float("inf")
        for _ in range(repeats):
            state = open_stream(encoder, C, L, frame_ms)
            start = time.perf_counter()
            for i in range(n_chunks):
                push_chunk(state, frames[i * C : (i + 1) * C], frames[(i + 1) * C : (i + 1) * C + L])
            best = min(best, (time.perf_counter() - start) * 1000.0 / n_chunks)
        rows.append(BenchRow(C, L, lat.chunk_ms, lat.with_lookahead_ms, best, state.cache_bytes))
    return rows
