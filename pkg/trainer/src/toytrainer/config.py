"""Training configuration for the toy executor.

The reference dimensions describe the full-size training recipe; a single
`scale_down` factor shrinks them uniformly so one run finishes in well under
a minute on a laptop CPU.  The effective (scaled) values are what the runner
actually uses.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ToyTrainerError


@dataclass
class ToyTrainConfig:
    heads: int = 8
    layers: int = 8
    hidden: int = 256
    peak_lr: float = 3e-4
    batch_size: int = 256
    context_len: int = 2048
    eval_sample_cap: int = 500
    scale_down: int = 8
    warmup_frac: float = 0.1

    def __post_init__(self) -> None:
        for name in (
            "heads",
            "layers",
            "hidden",
            "batch_size",
            "context_len",
            "eval_sample_cap",
            "scale_down",
        ):
            if getattr(self, name) < 1:
                raise ToyTrainerError(f"{name} must be a positive integer")
        if self.peak_lr <= 0:
            raise ToyTrainerError("peak_lr must be positive")
        if self.eval_sample_cap > 500:
            raise ToyTrainerError("eval_sample_cap must not exceed 500")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ToyTrainerError("warmup_frac must lie in [0, 1)")
        if self.hidden % self.heads:
            raise ToyTrainerError("hidden must divide evenly across heads")
        if self.eff_hidden % self.eff_heads:
            raise ToyTrainerError(
                "scaled hidden size must divide evenly across scaled heads"
            )

    # ------------------------------------------------------- effective dims

    def _scaled(self, value: int) -> int:
        return max(1, value // self.scale_down)

    @property
    def eff_heads(self) -> int:
        return self._scaled(self.heads)

    @property
    def eff_layers(self) -> int:
        return self._scaled(self.layers)

    @property
    def eff_hidden(self) -> int:
        return self._scaled(self.hidden)

    @property
    def eff_batch(self) -> int:
        return self._scaled(self.batch_size)

    @property
    def eff_context(self) -> int:
        return self._scaled(self.context_len)

    def model_width(self, model_scale: float = 1.0) -> int:
        """Effective hidden width under a run's model_scale multiplier,
        rounded down to a multiple of the effective head count."""
        if model_scale <= 0:
            raise ToyTrainerError("model_scale must be positive")
        width = int(self.eff_hidden * model_scale)
        width -= width % self.eff_heads
        return max(self.eff_heads, width)

    def steps_for_budget(self, token_budget: int) -> int:
        """Training steps that fit the token budget at the effective batch
        geometry (at least one)."""
        if token_budget < 1:
            raise ToyTrainerError("token_budget must be positive")
        return max(1, token_budget // (self.eff_batch * self.eff_context))
