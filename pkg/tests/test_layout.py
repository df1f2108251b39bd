import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from online_registers.layout import (
    Block,
    SlotKind,
    StreamConfig,
    assemble_online_input,
    build_layout,
    extract_frame_outputs,
    extract_register_outputs,
    lookahead_ranges,
    partition_chunks,
)

SWEEP = [(T, C, L, R) for T in range(1, 13) for C in range(1, 7) for L in range(C + 1) for R in range(4)]


def config(T, C, L=0, R=0, d=3):
    return StreamConfig(T=T, C=C, L=L, R=R, d=d)


def ranges(rs):
    return [(list(r.indices()), r.n_pad) for r in rs]


# Time indices below are 0-based: chunk i covers [iC, (i+1)C).


def test_partition_four_frames_two_chunks():
    assert ranges(partition_chunks(4, 2)) == [([0, 1], 0), ([2, 3], 0)]


def test_partition_six_frames():
    assert ranges(partition_chunks(6, 2)) == [([0, 1], 0), ([2, 3], 0), ([4, 5], 0)]


def test_partition_last_chunk_padded():
    assert ranges(partition_chunks(5, 2)) == [([0, 1], 0), ([2, 3], 0), ([4, 5], 1)]


def test_partition_single_chunk_longer_than_input():
    assert ranges(partition_chunks(3, 8)) == [(list(range(8)), 5)]


@pytest.mark.parametrize("T,C", [(0, 2), (2, 0), (-1, 1)])
def test_partition_rejects_bad_args(T, C):
    with pytest.raises(ValueError):
        partition_chunks(T, C)


def test_lookahead_golden_mask_case():
    assert ranges(lookahead_ranges(6, 2, 1)) == [([2], 0), ([4], 0), ([6], 1)]


def test_lookahead_zero_is_empty():
    assert all(not list(r.indices()) for r in lookahead_ranges(6, 2, 0))


def test_lookahead_both_pad():
    assert ranges(lookahead_ranges(4, 2, 2)) == [([2, 3], 0), ([4, 5], 2)]


def test_stream_config_validation():
    with pytest.raises(ValueError):
        StreamConfig(T=4, C=2, L=-1)
    with pytest.raises(ValueError):
        StreamConfig(T=4, C=2, frame_ms=0)
    assert StreamConfig(T=5, C=2, L=1, R=2).online_length == 3 * (2 + 1 + 2)


@pytest.mark.parametrize("T,C,L,R,length", [(4, 2, 0, 1, 6), (6, 2, 1, 1, 12), (2, 2, 0, 0, 2)])
def test_assembled_length(T, C, L, R, length):
    x = np.arange(T * 3, dtype=float).reshape(T, 3)
    out, layout = assemble_online_input(x, config(T, C, L, R), np.ones((R, 3)), np.zeros(3))
    assert out.shape == (length, 3) and len(layout) == length


def test_single_chunk_without_extras_is_identity():
    x = np.random.default_rng(0).normal(size=(2, 3))
    out, layout = assemble_online_input(x, config(2, 2), np.zeros((0, 3)), np.zeros(3))
    np.testing.assert_array_equal(out, x)
    assert all(s.kind is SlotKind.FRAME for s in layout.slots)


def test_golden_mask_layout_slots():
    layout = build_layout(config(6, 2, 1, 1))
    kinds = [s.kind for s in layout.slots]
    assert kinds[:6] == [SlotKind.FRAME] * 6
    assert kinds[6:9] == [SlotKind.LOOKAHEAD, SlotKind.LOOKAHEAD, SlotKind.PAD]
    assert kinds[9:] == [SlotKind.REGISTER] * 3
    assert [s.time for s in layout.slots[6:9]] == [2, 4, 6]
    assert layout.index(Block.REGISTER, 2, 0) == 11


def test_assemble_copies_rows_pads_and_registers():
    T, C, L, R, d = 5, 2, 2, 2, 3
    x = np.arange(T * d, dtype=float).reshape(T, d) + 1
    regs = -np.arange(R * d, dtype=float).reshape(R, d) - 1
    pad = np.full(d, 99.0)
    out, layout = assemble_online_input(x, config(T, C, L, R, d), regs, pad)
    for p, s in enumerate(layout.slots):
        if s.kind in (SlotKind.FRAME, SlotKind.LOOKAHEAD):
            np.testing.assert_array_equal(out[p], x[s.time])
        elif s.kind is SlotKind.PAD:
            np.testing.assert_array_equal(out[p], pad)
        else:
            np.testing.assert_array_equal(out[p], regs[s.register_index])


def test_assemble_batched_torch_keeps_grad():
    x = torch.randn(2, 5, 3, requires_grad=True)
    regs = torch.randn(1, 3, requires_grad=True)
    out, _ = assemble_online_input(x, config(5, 2, 1, 1), regs, torch.zeros(3))
    out.sum().backward()
    assert x.grad is not None and regs.grad is not None
    # Frame 2 appears as a chunk frame and as chunk 0's look-ahead.
    assert torch.all(x.grad[:, 2] == 2)


def test_assemble_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        assemble_online_input(np.zeros((4, 2)), config(4, 2, 0, 0, d=3), np.zeros((0, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        assemble_online_input(np.zeros((4, 3)), config(4, 2, 0, 1), np.zeros((2, 3)), np.zeros(3))


def test_extract_frames_golden_mask():
    layout = build_layout(config(6, 2, 1, 1))
    out = np.arange(12, dtype=float)[:, None] * np.ones(3)
    np.testing.assert_array_equal(extract_frame_outputs(out, layout)[:, 0], np.arange(6))


def test_extract_frames_drops_pad():
    layout = build_layout(config(5, 2))
    out = np.arange(6, dtype=float)[:, None]
    np.testing.assert_array_equal(extract_frame_outputs(out, layout)[:, 0], np.arange(5))


def test_extract_length_mismatch():
    with pytest.raises(ValueError):
        extract_frame_outputs(np.zeros((5, 3)), build_layout(config(6, 2, 1, 1)))


@pytest.mark.parametrize("T,C,L,R,n,rows", [(6, 2, 1, 1, 3, 1), (6, 2, 1, 0, 3, 0), (4, 2, 0, 2, 2, 2)])
def test_extract_registers(T, C, L, R, n, rows):
    layout = build_layout(config(T, C, L, R))
    blocks = extract_register_outputs(np.random.default_rng(0).normal(size=(len(layout), 3)), layout)
    assert len(blocks) == n and all(b.shape == (rows, 3) for b in blocks)


def test_extract_registers_order():
    layout = build_layout(config(4, 2, 0, 2))
    out = np.arange(len(layout), dtype=float)[:, None]
    blocks = extract_register_outputs(out, layout)
    assert [b[:, 0].tolist() for b in blocks] == [[4, 5], [6, 7]]


def test_exhaustive_layout_laws():
    for T, C, L, R in SWEEP:
        check_layout_laws(T, C, L, R)


def check_layout_laws(T, C, L, R):
    layout = build_layout(config(T, C, L, R))
    N = -(-T // C)
    assert len(layout) == N * C + N * L + N * R
    for p, s in enumerate(layout.slots):
        assert layout.index(s.block, s.chunk, s.offset) == p
    frames = [s.time for s in layout.slots if s.kind is SlotKind.FRAME]
    assert sorted(frames) == list(range(T))
    for s in layout.slots:
        if s.kind is SlotKind.FRAME:
            assert s.chunk * C <= s.time < (s.chunk + 1) * C
        if s.kind is SlotKind.LOOKAHEAD:
            assert (s.chunk + 1) * C <= s.time < (s.chunk + 1) * C + L
    la = [s.time for s in layout.slots if s.kind is SlotKind.LOOKAHEAD]
    assert len(la) == len(set(la))


@given(st.integers(1, 40), st.integers(1, 10), st.integers(0, 10), st.integers(0, 4))
def test_identity_encoder_roundtrip(T, C, L, R):
    x = np.random.default_rng(T * 1000 + C).normal(size=(T, 3))
    cfg = config(T, C, L, R)
    out, layout = assemble_online_input(x, cfg, np.ones((R, 3)), np.zeros(3))
    np.testing.assert_array_equal(extract_frame_outputs(out, layout), x)
    assert len(extract_register_outputs(out, layout)) == cfg.n_chunks


def test_dump_format():
    text = build_layout(config(3, 2, 1, 1)).dump().splitlines()
    assert text == [
        "0 frame 0 0",
        "1 frame 0 1",
        "2 frame 1 2",
        "3 pad 1 3",
        "4 lookahead 0 2",
        "5 pad 1 4",
        "6 register 0 -",
        "7 register 1 -",
    ]
