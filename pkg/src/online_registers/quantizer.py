"""Gumbel-softmax product quantizer producing contrastive targets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class QuantizerOutput:
    targets: torch.Tensor
    probs: torch.Tensor  # softmax of the logits, (..., G, V), noise-free
    selection: torch.Tensor  # (..., G, V); one-hot when hard
    logits: torch.Tensor

    @property
    def severed_targets(self) -> torch.Tensor:
        """Same values as :attr:`targets` with the graph cut; no gradient reaches the quantizer."""
        return self.targets.detach()


def gumbel_noise(shape, generator: Optional[torch.Generator] = None, dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=torch.float64).clamp(1e-12, 1 - 1e-12)
    return (-torch.log(-torch.log(u))).to(dtype)


class GumbelQuantizer(nn.Module):
    """Product quantizer: ``G`` groups of ``V`` codewords, one pick per group.

    The picked codewords are concatenated (width ``code_dim``) and projected
    linearly to ``target_dim``.
    """

    def __init__(
        self,
        input_dim: int,
        groups: int = 2,
        entries: int = 16,
        code_dim: Optional[int] = None,
        target_dim: Optional[int] = None,
        temperature: float = 1.0,
        seed: int = 0,
    ):
        super().__init__()
        code_dim = code_dim or input_dim
        target_dim = target_dim or input_dim
        if groups * entries < 2:
            raise ValueError("codebook needs at least two entries in total")
        if code_dim % groups:
            raise ValueError(f"code_dim={code_dim} is not divisible by groups={groups}")
        if not temperature > 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.groups = groups
        self.entries = entries
        self.temperature = temperature
        self.target_dim = target_dim
        self.logits = nn.Linear(input_dim, groups * entries)
        self.codebook = nn.Parameter(torch.empty(groups, entries, code_dim // groups))
        self.out_proj = nn.Linear(code_dim, target_dim)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        gen = torch.Generator().manual_seed(seed + 7919)
        with torch.no_grad():
            # Wide logit weights: codeword choice starts input-driven rather than noise-driven.
            self.logits.weight.copy_(2.0 * torch.randn(self.logits.weight.shape, generator=gen))
            self.logits.bias.zero_()
            bound = 1.0 / math.sqrt(self.out_proj.in_features)
            self.out_proj.weight.copy_(torch.rand(self.out_proj.weight.shape, generator=gen) * 2 * bound - bound)
            self.out_proj.bias.zero_()
            self.codebook.copy_(torch.randn(self.codebook.shape, generator=gen))

    def forward(
        self,
        features: torch.Tensor,
        *,
        hard: bool = True,
        generator: Optional[torch.Generator] = None,
        noise: Optional[torch.Tensor] = None,
        stochastic: bool = True,
    ) -> QuantizerOutput:
        """Quantize ``(..., input_dim)`` features.

        Gumbel noise is drawn from ``generator`` unless an explicit ``noise``
        tensor of shape ``(..., G, V)`` is given; ``stochastic=False`` selects
        from the clean logits. With ``hard=True`` the forward pass uses the
        one-hot argmax and the backward pass the relaxed softmax.
        """
        x = torch.as_tensor(features, dtype=self.codebook.dtype)
        logits = self.logits(x).unflatten(-1, (self.groups, self.entries))
        if noise is None and stochastic:
            noise = gumbel_noise(logits.shape, generator, logits.dtype)
        perturbed = logits if noise is None else logits + noise
        soft = torch.softmax(perturbed / self.temperature, dim=-1)
        if hard:
            index = perturbed.argmax(dim=-1, keepdim=True)
            one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
            selection = one_hot - soft.detach() + soft
        else:
            selection = soft
        # (..., G, V) x (G, V, c) -> (..., G, c)
        codes = torch.einsum("...gv,gvc->...gc", selection, self.codebook)
        targets = self.out_proj(codes.flatten(-2))
        return QuantizerOutput(targets=targets, probs=torch.softmax(logits, dim=-1), selection=selection, logits=logits)


def diversity_loss(probs: torch.Tensor, atol: float = 1e-6) -> torch.Tensor:
    """Codebook diversity penalty ``(G*V - sum_g exp(H(mean_probs_g))) / (G*V)``.

    ``probs`` is ``(..., G, V)``; all leading axes are averaged. Zero exactly
    when every group's averaged distribution is uniform.
    """
    p = torch.as_tensor(probs)
    if p.dim() < 2:
        raise ValueError("probs must have shape (..., groups, entries)")
    sums = p.sum(dim=-1)
    if (p < 0).any() or not torch.allclose(sums, torch.ones_like(sums), atol=atol):
        raise ValueError("probs are not normalized distributions over the last axis")
    G, V = p.shape[-2:]
    avg = p.reshape(-1, G, V).mean(dim=0)
    entropy = -torch.special.xlogy(avg, avg).sum(dim=-1)
    return (G * V - torch.exp(entropy).sum()) / (G * V)
