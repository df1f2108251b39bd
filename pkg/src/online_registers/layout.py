"""Chunk partitioning and online-mode sequence assembly.

All indices are 0-based: chunk ``i`` owns frames ``[i*C, (i+1)*C)`` and its
look-ahead segment covers ``[(i+1)*C, (i+1)*C + L)``. Positions past the end of
the utterance become pad slots.

The assembled online sequence is laid out block by block::

    [chunk_0 .. chunk_{N-1}, lookahead_0 .. lookahead_{N-1}, registers_0 .. registers_{N-1}]
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import torch

from ._validation import check_nonneg_int, check_positive_int


class SlotKind(enum.Enum):
    FRAME = "frame"
    LOOKAHEAD = "lookahead"
    REGISTER = "register"
    PAD = "pad"


class Block(enum.Enum):
    CHUNK = "chunk"
    LOOKAHEAD = "lookahead"
    REGISTER = "register"


@dataclass(frozen=True)
class StreamConfig:
    """Geometry of one dual-mode pass.

    Attributes:
        T: number of frames in the utterance.
        C: chunk size in frames.
        L: look-ahead frames per chunk.
        R: online registers per chunk.
        d: model width.
        frame_ms: real-time duration of one frame.
    """

    T: int
    C: int
    L: int = 0
    R: int = 0
    d: int = 1
    frame_ms: float = 20.0

    def __post_init__(self):
        check_positive_int(self.T, "T")
        check_positive_int(self.C, "C")
        check_nonneg_int(self.L, "L")
        check_nonneg_int(self.R, "R")
        check_positive_int(self.d, "d")
        if not self.frame_ms > 0:
            raise ValueError(f"frame_ms must be positive, got {self.frame_ms}")

    @property
    def n_chunks(self) -> int:
        return math.ceil(self.T / self.C)

    @property
    def online_length(self) -> int:
        n = self.n_chunks
        return n * (self.C + self.L + self.R)


class TimeRange(NamedTuple):
    """Half-open range ``[start, stop)`` of time indices; ``n_pad`` trailing ones lie past T."""

    start: int
    stop: int
    n_pad: int

    def indices(self) -> range:
        return range(self.start, self.stop)


def partition_chunks(T: int, C: int) -> list[TimeRange]:
    check_positive_int(T, "T")
    check_positive_int(C, "C")
    n = math.ceil(T / C)
    return [TimeRange(i * C, (i + 1) * C, max(0, (i + 1) * C - T)) for i in range(n)]


def lookahead_ranges(T: int, C: int, L: int) -> list[TimeRange]:
    check_positive_int(T, "T")
    check_positive_int(C, "C")
    check_nonneg_int(L, "L")
    out = []
    for i in range(math.ceil(T / C)):
        start = (i + 1) * C
        stop = start + L
        out.append(TimeRange(start, stop, max(0, stop - max(start, T))))
    return out


@dataclass(frozen=True)
class SlotDescriptor:
    """Semantic identity of one slot in the assembled online sequence.

    ``time`` is the original time index for frame, look-ahead and pad slots
    (for pads, the out-of-range index they stand in for) and ``None`` for
    registers. ``offset`` is the slot's position inside its per-chunk block.
    """

    kind: SlotKind
    block: Block
    chunk: int
    offset: int
    time: Optional[int] = None
    register_index: Optional[int] = None

    @property
    def is_pad(self) -> bool:
        return self.kind is SlotKind.PAD


@dataclass(frozen=True)
class ChunkLayout:
    config: StreamConfig
    slots: tuple[SlotDescriptor, ...]
    _index: dict = field(repr=False, compare=False)
    # Flat per-slot arrays used by the vectorized mask builder and gathers.
    kinds: np.ndarray = field(repr=False, compare=False)
    chunks: np.ndarray = field(repr=False, compare=False)
    times: np.ndarray = field(repr=False, compare=False)
    sources: np.ndarray = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.slots)

    def slot_of(self, position: int) -> SlotDescriptor:
        return self.slots[position]

    def index(self, block: Block, chunk: int, offset: int) -> int:
        try:
            return self._index[(Block(block), chunk, offset)]
        except KeyError:
            raise KeyError(f"no slot ({block}, chunk={chunk}, offset={offset})") from None

    @property
    def positions(self) -> np.ndarray:
        """Positional-encoding index per slot; -1 for registers."""
        return self.times

    @property
    def frame_positions(self) -> np.ndarray:
        """Assembled position of the chunk-frame slot of each real time index."""
        # The chunk block comes first and is in time order.
        return np.arange(self.config.T, dtype=np.int64)

    @property
    def register_positions(self) -> np.ndarray:
        """``(N, R)`` array of register slot positions."""
        cfg = self.config
        base = cfg.n_chunks * (cfg.C + cfg.L)
        return base + np.arange(cfg.n_chunks * cfg.R, dtype=np.int64).reshape(cfg.n_chunks, cfg.R)

    @property
    def pad_mask(self) -> np.ndarray:
        return self.kinds == _KIND_CODES[SlotKind.PAD]

    def dump(self) -> str:
        """One slot per line: ``position kind chunk time`` (``-`` for no time)."""
        lines = []
        for p, s in enumerate(self.slots):
            t = "-" if s.time is None else str(s.time)
            lines.append(f"{p} {s.kind.value} {s.chunk} {t}")
        return "\n".join(lines) + "\n"


_KIND_CODES = {SlotKind.FRAME: 0, SlotKind.LOOKAHEAD: 1, SlotKind.REGISTER: 2, SlotKind.PAD: 3}


@functools.lru_cache(maxsize=512)
def build_layout(config: StreamConfig) -> ChunkLayout:
    """Enumerate the slots of the assembled online sequence.

    ``sources`` indexes into the stacked source table
    ``[frames (T rows), pad (1 row), registers (R rows)]`` used by
    :func:`assemble_online_input`.
    """
    T, C, L, R = config.T, config.C, config.L, config.R
    slots: list[SlotDescriptor] = []
    sources: list[int] = []
    for i, rng in enumerate(partition_chunks(T, C)):
        for off, t in enumerate(rng.indices()):
            kind = SlotKind.FRAME if t < T else SlotKind.PAD
            slots.append(SlotDescriptor(kind, Block.CHUNK, i, off, time=t))
            sources.append(t if t < T else T)
    for i, rng in enumerate(lookahead_ranges(T, C, L)):
        for off, t in enumerate(rng.indices()):
            kind = SlotKind.LOOKAHEAD if t < T else SlotKind.PAD
            slots.append(SlotDescriptor(kind, Block.LOOKAHEAD, i, off, time=t))
            sources.append(t if t < T else T)
    for i in range(config.n_chunks):
        for r in range(R):
            slots.append(SlotDescriptor(SlotKind.REGISTER, Block.REGISTER, i, r, register_index=r))
            sources.append(T + 1 + r)

    index = {(s.block, s.chunk, s.offset): p for p, s in enumerate(slots)}
    return ChunkLayout(
        config=config,
        slots=tuple(slots),
        _index=index,
        kinds=np.array([_KIND_CODES[s.kind] for s in slots], dtype=np.int8),
        chunks=np.array([s.chunk for s in slots], dtype=np.int64),
        times=np.array([-1 if s.time is None else s.time for s in slots], dtype=np.int64),
        sources=np.array(sources, dtype=np.int64),
    )


def assemble_online_input(frames, config: StreamConfig, registers, pad_embedding):
    """Gather frames, pads and registers into the online input sequence.

    Works on a single ``(T, d)`` matrix or a batch ``(B, T, d)``; torch tensors
    keep their autograd graph, numpy arrays come back as numpy.

    Returns:
        ``(assembled, layout)``.
    """
    as_numpy = isinstance(frames, np.ndarray)
    x = torch.as_tensor(frames)
    reg = torch.as_tensor(registers, dtype=x.dtype).reshape(-1, config.d)
    pad = torch.as_tensor(pad_embedding, dtype=x.dtype).reshape(1, config.d)
    if x.shape[-2:] != (config.T, config.d):
        raise ValueError(f"frames must have shape (..., {config.T}, {config.d}), got {tuple(x.shape)}")
    if reg.shape[0] != config.R:
        raise ValueError(f"expected {config.R} register vectors, got {reg.shape[0]}")

    layout = build_layout(config)
    lead = x.shape[:-2]
    table = torch.cat([x, pad.expand(*lead, 1, config.d), reg.expand(*lead, config.R, config.d)], dim=-2)
    out = table.index_select(-2, torch.from_numpy(layout.sources))
    return (out.numpy() if as_numpy else out), layout


def _rows(encoder_output, layout: ChunkLayout):
    out = encoder_output
    if out.shape[-2] != len(layout):
        raise ValueError(f"encoder output has {out.shape[-2]} rows, layout has {len(layout)}")
    return out


def extract_frame_outputs(encoder_output, layout: ChunkLayout):
    """Rows of the chunk-frame slots, re-aligned to time order (pads dropped)."""
    out = _rows(encoder_output, layout)
    idx = layout.frame_positions
    if isinstance(out, np.ndarray):
        return out[..., idx, :]
    return out.index_select(-2, torch.from_numpy(idx).to(out.device))


def extract_register_outputs(encoder_output, layout: ChunkLayout) -> list:
    """Per-chunk register outputs ``U_i``, each ``(R, d)`` (``(..., R, d)`` for batches)."""
    out = _rows(encoder_output, layout)
    if isinstance(out, np.ndarray):
        return [out[..., pos, :] for pos in layout.register_positions]
    return [out.index_select(-2, torch.from_numpy(pos).to(out.device)) for pos in layout.register_positions]
