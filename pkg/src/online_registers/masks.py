"""Additive attention masks for offline and online (chunk-wise) encoding."""
from __future__ import annotations

import numpy as np

from ._validation import check_positive_int
from .layout import ChunkLayout, SlotDescriptor, SlotKind, _KIND_CODES


def allowed(query: SlotDescriptor, key: SlotDescriptor) -> bool:
    """Whether ``query`` may attend to ``key`` in online mode.

    A query of chunk ``i`` (whatever its kind) sees the chunk frames of chunks
    ``<= i`` plus the look-ahead and registers of chunk ``i`` itself. Pad keys
    are never visible.
    """
    i = query.chunk
    if key.kind is SlotKind.FRAME:
        return key.chunk <= i
    if key.kind in (SlotKind.LOOKAHEAD, SlotKind.REGISTER):
        return key.chunk == i
    return False


def build_online_mask_bruteforce(layout: ChunkLayout) -> np.ndarray:
    n = len(layout)
    mask = np.full((n, n), -np.inf)
    for p, q in enumerate(layout.slots):
        for k, key in enumerate(layout.slots):
            if allowed(q, key):
                mask[p, k] = 0.0
    return mask


def online_visibility(layout: ChunkLayout) -> np.ndarray:
    """Boolean ``(n, n)`` visibility matrix, vectorized."""
    kinds, chunks = layout.kinds, layout.chunks
    q_chunk = chunks[:, None]
    k_chunk = chunks[None, :]
    is_frame = (kinds == _KIND_CODES[SlotKind.FRAME])[None, :]
    is_local = np.isin(kinds, (_KIND_CODES[SlotKind.LOOKAHEAD], _KIND_CODES[SlotKind.REGISTER]))[None, :]
    return (is_frame & (k_chunk <= q_chunk)) | (is_local & (k_chunk == q_chunk))


def build_online_mask(layout: ChunkLayout) -> np.ndarray:
    """``(n, n)`` float mask with 0 where attention is allowed and -inf elsewhere."""
    return np.where(online_visibility(layout), 0.0, -np.inf)


def build_offline_mask(T: int) -> np.ndarray:
    check_positive_int(T, "T")
    return np.zeros((T, T))


def render_ascii(mask: np.ndarray, layout: ChunkLayout | None = None) -> str:
    """Grid view: ``#`` allowed, ``.`` masked; rows optionally labelled by slot."""
    lines = []
    for p, row in enumerate(mask):
        cells = "".join("#" if v == 0 else "." for v in row)
        if layout is not None:
            s = layout.slots[p]
            tag = s.kind.value[0].upper()
            label = f"{tag}{s.chunk}:{s.time if s.time is not None else 'r' + str(s.register_index)}"
            lines.append(f"{p:>3} {label:<8} {cells}")
        else:
            lines.append(cells)
    return "\n".join(lines) + "\n"


def render_csv(mask: np.ndarray) -> str:
    """One row per query slot, ``1`` allowed, ``0`` masked."""
    return "\n".join(",".join("1" if v == 0 else "0" for v in row) for row in mask) + "\n"


def render_bits(mask: np.ndarray) -> str:
    """Compact 0/1 rows without separators (golden-file format)."""
    return "\n".join("".join("1" if v == 0 else "0" for v in row) for row in mask) + "\n"
