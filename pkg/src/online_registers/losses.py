"""Contrastive, diversity-weighted and future-prediction objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence, Union

import numpy as np
import torch

from .layout import StreamConfig

Scalar = Union[float, torch.Tensor]

COSINE_EPS = 1e-8


class NonFiniteLossError(ValueError):
    pass


@dataclass
class LossBreakdown:
    """Named loss components of one step; values are floats or 0-d tensors."""

    off: Scalar
    on: Scalar
    diversity: Scalar
    future: Scalar
    dual: Scalar
    total: Scalar
    alpha: float = 0.1
    beta: float = 1.0

    def as_floats(self) -> "LossBreakdown":
        conv = lambda v: float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return LossBreakdown(**{f.name: conv(getattr(self, f.name)) for f in fields(self)})

    def to_row(self) -> dict[str, float]:
        b = self.as_floats()
        return {"L_off": b.off, "L_on": b.on, "L_d": b.diversity, "L_fp": b.future, "L_dual": b.dual, "L_total": b.total}


def total_loss(off: Scalar, on: Scalar, diversity: Scalar, future: Scalar = 0.0, alpha: float = 0.1, beta: float = 1.0) -> LossBreakdown:
    """Combine components: ``dual = (off + on) / 2 + alpha * diversity``, ``total = dual + beta * future``."""
    for name, value in (("L_off", off), ("L_on", on), ("L_d", diversity), ("L_fp", future)):
        if not math.isfinite(float(value.detach() if isinstance(value, torch.Tensor) else value)):
            raise NonFiniteLossError(f"loss component {name} is not finite: {value}")
    dual = 0.5 * (off + on) + alpha * diversity
    return LossBreakdown(off=off, on=on, diversity=diversity, future=future, dual=dual, total=dual + beta * future, alpha=alpha, beta=beta)


def sample_distractors(masked: Sequence[int], t: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """Draw up to ``K`` distinct masked steps other than ``t``, uniformly without replacement."""
    masked = np.asarray(masked, dtype=np.int64)
    if len(masked) < 2:
        raise ValueError(f"need at least two masked steps to draw distractors, got {len(masked)}")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    pool = masked[masked != t]
    return rng.choice(pool, size=min(K, len(pool)), replace=False)


def distractor_table(n_masked: int, K: int, rng: np.random.Generator) -> np.ndarray:
    """``(n_masked, min(K, n_masked - 1))`` local indices; row ``m`` never contains ``m``."""
    if n_masked < 2:
        raise ValueError(f"need at least two masked steps to draw distractors, got {n_masked}")
    k = min(K, n_masked - 1)
    table = np.empty((n_masked, k), dtype=np.int64)
    for m in range(n_masked):
        pick = rng.choice(n_masked - 1, size=k, replace=False)
        table[m] = pick + (pick >= m)
    return table


def _unit(x: torch.Tensor) -> torch.Tensor:
    # Clamping (not adding) keeps cosine exactly scale-invariant away from zero.
    return x / x.norm(dim=-1, keepdim=True).clamp_min(COSINE_EPS)


def _similarity_logits(outputs, targets, distractors, kappa):
    y = _unit(torch.as_tensor(outputs))
    q = _unit(torch.as_tensor(targets, dtype=y.dtype))
    idx = torch.as_tensor(np.asarray(distractors), dtype=torch.long).reshape(len(y), -1)
    if y.shape != q.shape:
        raise ValueError(f"outputs {tuple(y.shape)} and targets {tuple(q.shape)} must have the same shape")
    candidates = torch.cat([q[:, None, :], q[idx]], dim=1)  # (M, K+1, D); column 0 is the true target
    return torch.einsum("md,mkd->mk", y, candidates) / kappa


def contrastive_loss(outputs, targets, distractors, kappa: float = 0.1, sever_targets: bool = False) -> torch.Tensor:
    """Summed InfoNCE over masked steps with cosine similarity.

    Args:
        outputs: ``(M, D)`` encoder outputs at the masked steps.
        targets: ``(M, D)`` quantized targets for the same steps.
        distractors: ``(M, K)`` indices into ``targets`` of the negatives for each step.
        kappa: temperature.
        sever_targets: cut the gradient through every target and distractor.
    """
    targets = torch.as_tensor(targets)
    if sever_targets:
        targets = targets.detach()
    logits = _similarity_logits(outputs, targets, distractors, kappa)
    return -torch.log_softmax(logits, dim=-1)[:, 0].sum()


def contrastive_accuracy(outputs, targets, distractors) -> float:
    """Fraction of steps whose true target strictly beats every distractor (ties count as misses)."""
    with torch.no_grad():
        logits = _similarity_logits(outputs, targets, distractors, 1.0)
        if logits.shape[0] == 0:
            return 0.0
        if logits.shape[1] == 1:
            return 1.0
        return float((logits[:, 0] > logits[:, 1:].max(dim=1).values).double().mean())


def future_target_rows(config: StreamConfig, chunk: int) -> range:
    """Time indices of the offline rows chunk ``chunk``'s registers should predict, clipped to T."""
    start = (chunk + 1) * config.C + config.L
    return range(min(start, config.T), min(start + config.R, config.T))


def future_targets(y_off, config: StreamConfig, chunk: int):
    """Offline outputs just past chunk ``chunk``'s look-ahead, gradient-severed."""
    rows = future_target_rows(config, chunk)
    out = y_off[..., rows.start:rows.stop, :]
    return out.detach() if isinstance(out, torch.Tensor) else out


def future_prediction_loss(registers, future) -> torch.Tensor:
    """Sum over chunks of the mean squared error between register outputs and their future targets.

    ``registers[i]`` is ``(..., R, d)``; ``future[i]`` is ``(..., r_i, d)``
    with ``r_i <= R``, paired with the leading ``r_i`` registers. Chunks with
    no future rows contribute nothing.
    """
    total = None
    dtype = torch.get_default_dtype()
    for u, u_hat in zip(registers, future):
        u = torch.as_tensor(u)
        dtype = u.dtype
        u_hat = torch.as_tensor(u_hat, dtype=u.dtype)
        n = u_hat.shape[-2]
        if n == 0:
            continue
        if n > u.shape[-2]:
            raise ValueError(f"{n} future rows for only {u.shape[-2]} registers")
        term = ((u[..., :n, :] - u_hat) ** 2).mean()
        total = term if total is None else total + term
    if total is None:
        return torch.zeros((), dtype=dtype)
    return total
