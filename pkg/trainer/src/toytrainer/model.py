"""Candidate loading and the toy language model around a token mixer.

A candidate source file must define a class named ``DeltaNet`` constructible
as ``DeltaNet(d_model, n_heads)`` whose ``forward`` maps hidden states
``(batch, seq, d_model)`` to the same shape, causally.  The model wraps that
mixer in pre-norm residual blocks with an MLP, tied to a character vocabulary.
"""

from __future__ import annotations

import types
from importlib import resources

import torch
from torch import nn

from . import ToyTrainerError

ENTRY_POINT = "DeltaNet"


def load_baseline_source() -> str:
    return (
        resources.files("toytrainer")
        .joinpath("assets/baseline_source.py.txt")
        .read_text(encoding="utf-8")
    )


def load_mixer_class(source: str) -> type:
    """Execute candidate source in a fresh module and return its entry point."""
    module = types.ModuleType("candidate_architecture")
    exec(compile(source, "<candidate_source>", "exec"), module.__dict__)
    mixer = getattr(module, ENTRY_POINT, None)
    if mixer is None or not isinstance(mixer, type):
        raise ToyTrainerError(
            f"candidate source does not define a {ENTRY_POINT} class entry point"
        )
    return mixer


class MixerBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, mixer_cls: type) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.mixer = mixer_cls(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.GELU(),
            nn.Linear(4 * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.mixer(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TokenMixerLM(nn.Module):
    def __init__(
        self, vocab_size: int, d_model: int, n_heads: int, n_layers: int, mixer_cls: type
    ) -> None:
        super().__init__()
        self.embed = nn.Embedding(vocab_size, d_model)
        self.blocks = nn.ModuleList(
            MixerBlock(d_model, n_heads, mixer_cls) for _ in range(n_layers)
        )
        self.norm_f = nn.LayerNorm(d_model)
        self.head = nn.Linear(d_model, vocab_size, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        x = self.embed(tokens)
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm_f(x))

    def next_char_loss(self, tokens: torch.Tensor) -> torch.Tensor:
        """Mean cross-entropy of each position predicting its successor."""
        logits = self.forward(tokens[:, :-1])
        targets = tokens[:, 1:]
        return nn.functional.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), targets.reshape(-1)
        )
