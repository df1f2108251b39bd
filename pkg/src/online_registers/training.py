"""Toy dual-mode pre-training: synthetic data, dynamic chunking, losses and updates."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .encoder import DualModeEncoder, MaskingPlan
from .layout import StreamConfig
from .losses import (
    LossBreakdown,
    NonFiniteLossError,
    contrastive_accuracy,
    contrastive_loss,
    distractor_table,
    future_prediction_loss,
    future_targets,
    total_loss,
)
from .quantizer import GumbelQuantizer, diversity_loss, gumbel_noise

logger = logging.getLogger(__name__)

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 0  # 0 means 4 * d_model
    n_registers: int = 1
    input_dim: int = 0  # 0 means frames are already d_model wide
    target_dim: int = 0  # 0 means d_model
    codebook_groups: int = 2
    codebook_entries: int = 16
    temperature: float = 1.0
    seed: int = 0
    dtype: str = "float32"


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    min_frames: int = 48
    max_frames: int = 48
    feature_noise: float = 0.1
    learning_rate: float = 5e-3
    warmup_fraction: float = 0.1
    adam_betas: tuple = (0.9, 0.98)
    adam_eps: float = 1e-6
    min_chunk: int = 2
    max_chunk: int = 32
    dynamic_chunks: bool = True
    chunk_size: int = 8  # used when dynamic_chunks is off
    lookahead: int = 0  # used when dynamic_chunks is off
    mask_prob: float = 0.25
    mask_span: int = 1
    kappa: float = 0.1
    n_distractors: int = 10
    alpha: float = 0.1
    beta: float = 1.0
    seed: int = 0


class PretrainingModel(nn.Module):
    """Encoder, quantizer and the output projection compared against targets."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        in_dim = c.input_dim or c.d_model
        target = c.target_dim or c.d_model
        self.encoder = DualModeEncoder(
            c.d_model,
            n_layers=c.n_layers,
            n_heads=c.n_heads,
            d_ff=c.d_ff or None,
            n_registers=c.n_registers,
            input_dim=c.input_dim or None,
            seed=c.seed,
        )
        self.quantizer = GumbelQuantizer(
            in_dim, c.codebook_groups, c.codebook_entries, code_dim=c.d_model, target_dim=target,
            temperature=c.temperature, seed=c.seed,
        )
        self.final_proj = nn.Linear(c.d_model, target)
        gen = torch.Generator().manual_seed(c.seed + 104729)
        with torch.no_grad():
            bound = 1.0 / math.sqrt(c.d_model)
            self.final_proj.weight.copy_(torch.rand(self.final_proj.weight.shape, generator=gen) * 2 * bound - bound)
            self.final_proj.bias.zero_()
        self.to(DTYPES[c.dtype])

    @property
    def dtype(self):
        return self.encoder.dtype


# -- sampling ---------------------------------------------------------------


def sample_dynamic_config(rng: np.random.Generator, min_chunk: int = 2, max_chunk: int = 32) -> tuple[int, int]:
    """One ``(C, L)`` draw: ``C ~ U{min_chunk..max_chunk}``, then ``L ~ U{0..C}``."""
    C = int(rng.integers(min_chunk, max_chunk + 1))
    L = int(rng.integers(0, C + 1))
    return C, L


def sample_masking_plan(T: int, p: float, M: int, rng: np.random.Generator) -> MaskingPlan:
    """Start a span of ``M`` steps at each index with probability ``p``; overlaps merge."""
    if T < 1:
        raise ValueError(f"T must be positive, got {T}")
    starts = np.flatnonzero(rng.random(T) < p)
    masked = np.zeros(T, dtype=bool)
    for s in starts:
        masked[s : s + M] = True
    return MaskingPlan(T=T, indices=tuple(np.flatnonzero(masked)), mask_prob=p, span=M)


class SyntheticSpeech:
    """Sums of random sinusoids, linearly mixed into ``d`` channels, plus noise.

    The mixing matrix is fixed per instance, so utterances share structure and
    frames a few steps ahead are partly predictable from the past.
    """

    def __init__(self, d: int, n_sources: int = 3, noise: float = 0.1, seed: int = 0, min_period: float = 12.0, max_period: float = 48.0):
        gen = np.random.default_rng(seed)
        self.d = d
        self.n_sources = n_sources
        self.noise = noise
        self.min_period = min_period
        self.max_period = max_period
        self.mixing = gen.normal(size=(n_sources, d)) / math.sqrt(n_sources)

    def batch(self, rng: np.random.Generator, batch: int, T: int) -> np.ndarray:
        t = np.arange(T)[None, :, None]
        period = rng.uniform(self.min_period, self.max_period, size=(batch, 1, self.n_sources))
        phase = rng.uniform(0, 2 * np.pi, size=(batch, 1, self.n_sources))
        amp = rng.uniform(0.5, 1.5, size=(batch, 1, self.n_sources))
        sources = amp * np.sin(2 * np.pi * t / period + phase)
        x = sources @ self.mixing
        if self.noise:
            x = x + self.noise * rng.normal(size=x.shape)
        return x


def synth_batch(rng: np.random.Generator, batch: int, T, d: int, noise: float = 0.1, basis_seed: int = 0) -> np.ndarray:
    """``(batch, T, d)`` synthetic frames; ``T`` may be an int or an inclusive ``(lo, hi)`` range."""
    if not isinstance(T, int):
        lo, hi = T
        T = int(rng.integers(lo, hi + 1))
    return SyntheticSpeech(d, noise=noise, seed=basis_seed).batch(rng, batch, T)


# -- objective --------------------------------------------------------------


@dataclass
class StepInputs:
    """Everything random about one step, drawn up front so a step can be replayed exactly."""

    config: StreamConfig
    plans: list
    distractors: list  # per utterance (M_b, K_b) table, or None when skipped
    noise: Optional[torch.Tensor]  # Gumbel noise for all masked steps of the batch


@dataclass
class StepOutputs:
    losses: LossBreakdown
    accuracy_off: float
    accuracy_on: float
    targets: torch.Tensor
    future: list
    extra: dict = field(default_factory=dict)


def draw_step_inputs(model: PretrainingModel, T: int, batch: int, cfg: TrainConfig, rng: np.random.Generator,
                     generator: Optional[torch.Generator], chunk: Optional[tuple[int, int]] = None) -> StepInputs:
    if chunk is None:
        chunk = sample_dynamic_config(rng, cfg.min_chunk, cfg.max_chunk) if cfg.dynamic_chunks else (cfg.chunk_size, cfg.lookahead)
    C, L = chunk
    mc = model.config
    config = StreamConfig(T=T, C=C, L=L, R=mc.n_registers, d=mc.d_model)
    plans = [sample_masking_plan(T, cfg.mask_prob, cfg.mask_span, rng) for _ in range(batch)]
    tables = [distractor_table(len(p), cfg.n_distractors, rng) if len(p) >= 2 else None for p in plans]
    n_masked = sum(len(p) for p in plans)
    noise = None
    if generator is not None:
        noise = gumbel_noise((n_masked, mc.codebook_groups, mc.codebook_entries), generator, model.dtype)
    return StepInputs(config, plans, tables, noise)


def forward_losses(model: PretrainingModel, frames, inputs: StepInputs, cfg: TrainConfig, *, hard: bool = True,
                   severed_targets: Optional[torch.Tensor] = None, severed_future: Optional[list] = None) -> StepOutputs:
    """Dual forward and all loss components for one batch.

    The online contrastive loss and the future-prediction loss read
    gradient-severed copies of the quantized targets and the offline outputs.
    ``severed_targets``/``severed_future`` substitute explicit constants for
    those copies, which is how a finite-difference check holds them fixed.
    """
    x = torch.as_tensor(frames, dtype=model.dtype)
    B = x.shape[0]
    out = model.encoder.encode_dual(x, inputs.plans, inputs.config)

    b_idx = np.concatenate([np.full(len(p), b) for b, p in enumerate(inputs.plans)]).astype(np.int64)
    t_idx = np.concatenate([np.asarray(p.indices, dtype=np.int64) for p in inputs.plans])
    q_out = model.quantizer(x[b_idx, t_idx], hard=hard, noise=inputs.noise, stochastic=False)
    targets = q_out.targets
    sev = targets.detach() if severed_targets is None else severed_targets

    y_off = model.final_proj(out.y_off[b_idx, t_idx])
    y_on = model.final_proj(out.y_on[b_idx, t_idx])

    zero = torch.zeros((), dtype=model.dtype)
    l_off, l_on = zero, zero
    acc_off, acc_on, counted = 0.0, 0.0, 0
    start = 0
    for b, (plan, table) in enumerate(zip(inputs.plans, inputs.distractors)):
        sl = slice(start, start + len(plan))
        start += len(plan)
        if table is None:
            warnings.warn(f"utterance {b} has {len(plan)} masked steps; contrastive loss skipped", RuntimeWarning, stacklevel=2)
            continue
        l_off = l_off + contrastive_loss(y_off[sl], targets[sl], table, cfg.kappa)
        l_on = l_on + contrastive_loss(y_on[sl], sev[sl], table, cfg.kappa, sever_targets=True)
        acc_off += contrastive_accuracy(y_off[sl], targets[sl], table) * len(plan)
        acc_on += contrastive_accuracy(y_on[sl], sev[sl], table) * len(plan)
        counted += len(plan)
    l_off, l_on = l_off / B, l_on / B
    l_d = diversity_loss(q_out.probs) if len(t_idx) else zero

    config = inputs.config
    if severed_future is None:
        severed_future = [future_targets(out.y_off, config, i) for i in range(config.n_chunks)]
    if config.R:
        l_fp = future_prediction_loss([out.registers[..., i, :, :] for i in range(config.n_chunks)], severed_future)
        l_fp = l_fp.to(model.dtype)
    else:
        l_fp = zero
    losses = total_loss(l_off, l_on, l_d, l_fp, alpha=cfg.alpha, beta=cfg.beta)
    return StepOutputs(
        losses=losses,
        accuracy_off=acc_off / counted if counted else 0.0,
        accuracy_on=acc_on / counted if counted else 0.0,
        targets=targets,
        future=severed_future,
        extra={"dual": out},
    )


# -- optimization -----------------------------------------------------------


def warmup_linear_decay(step: int, total: int, warmup_fraction: float) -> float:
    """Learning-rate multiplier: linear ramp to 1 over the warmup, then linear decay to 0."""
    warm = max(1, int(round(warmup_fraction * total)))
    if step < warm:
        return (step + 1) / warm
    return max(0.0, (total - step) / max(1, total - warm))


class Trainer:
    """Holds the model, optimizer and all random streams of one run."""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig, model: Optional[PretrainingModel] = None,
                 data: Optional[Callable[[np.random.Generator, int, int], np.ndarray]] = None):
        self.model_config = model_config
        self.config = train_config
        self.model = model if model is not None else PretrainingModel(model_config)
        cfg = train_config
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.adam_betas), eps=cfg.adam_eps)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(
            self.optimizer, lambda s: warmup_linear_decay(s, cfg.steps, cfg.warmup_fraction)
        )
        self.data_rng = np.random.default_rng([cfg.seed, 1])
        self.step_rng = np.random.default_rng([cfg.seed, 2])
        self.generator = torch.Generator().manual_seed(cfg.seed + 3)
        width = model_config.input_dim or model_config.d_model
        source = SyntheticSpeech(width, noise=cfg.feature_noise, seed=cfg.seed)
        self.data = data or source.batch
        self.step = 0

    def next_batch(self) -> np.ndarray:
        cfg = self.config
        T = int(self.data_rng.integers(cfg.min_frames, cfg.max_frames + 1))
        return self.data(self.data_rng, cfg.batch_size, T)

    def train_step(self, frames=None) -> dict:
        """One dual forward, backward and optimizer update. Returns a metrics row."""
        if frames is None:
            frames = self.next_batch()
        self.model.train()
        x = torch.as_tensor(frames, dtype=self.model.dtype)
        inputs = draw_step_inputs(self.model, x.shape[1], x.shape[0], self.config, self.step_rng, self.generator)
        where = f"step {self.step} (C={inputs.config.C}, L={inputs.config.L})"
        try:
            result = forward_losses(self.model, x, inputs, self.config)
        except NonFiniteLossError as exc:
            raise FloatingPointError(f"{where}: {exc}") from exc
        loss = result.losses.total
        if not torch.isfinite(loss):
            raise FloatingPointError(f"{where}: non-finite total loss {result.losses.as_floats()}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.scheduler.step()
        row = {"step": self.step, **result.losses.to_row(), "accuracy": result.accuracy_off,
               "accuracy_on": result.accuracy_on, "C": inputs.config.C, "L": inputs.config.L}
        self.step += 1
        return row

    def fit(self, steps: Optional[int] = None, log_every: int = 0) -> list[dict]:
        history = []
        for _ in range(steps if steps is not None else self.config.steps):
            row = self.train_step()
            history.append(row)
            if log_every and row["step"] % log_every == 0:
                logger.info("step %d  L_total=%.4f  L_on=%.4f  acc=%.3f", row["step"], row["L_total"], row["L_on"], row["accuracy"])
        return history


def train(model_config: ModelConfig, train_config: TrainConfig, log_every: int = 0):
    """Run a full toy pre-training; returns ``(model, history)``."""
    trainer = Trainer(model_config, train_config)
    history = trainer.fit(log_every=log_every)
    return trainer.model, history


def window_mean(history: Sequence[dict], key: str, start: int, stop: int) -> float:
    return float(np.mean([row[key] for row in history[start:stop]]))


def config_to_dict(cfg) -> dict:
    return asdict(cfg)
