"""The wire-contract run: train a candidate mixer, stream progress, emit metrics.

Input files (written by the engine into the workspace):
  - ``candidate_source.txt`` — architecture code defining ``DeltaNet``
  - ``run_config.json`` — stage budgets: seed, token_budget, eval_sample_cap,
    model_scale (extra keys are ignored)

Output files:
  - ``progress.log`` — one ``STEP <n> LOSS <x>`` line per logged step, flushed
    as training proceeds so the supervisor can watch the run live
  - ``metrics.json`` — final payload; ``status`` is ``ok`` or ``error`` and the
    process exit code matches (0 for ok, 1 for error)
"""

from __future__ import annotations

import json
import logging
import math
import time
import traceback
from pathlib import Path

import torch

from . import ToyTrainerError
from .config import ToyTrainConfig
from .corpus import CharTokenizer, generate_corpus
from .model import TokenMixerLM, load_mixer_class
from .probes import PROBE_NAMES, build_probes, score_probes

logger = logging.getLogger(__name__)

CANDIDATE_SOURCE = "candidate_source.txt"
RUN_CONFIG = "run_config.json"
PROGRESS_LOG = "progress.log"
METRICS_JSON = "metrics.json"

GRAD_CLIP = 1.0
VAL_FRACTION = 0.1
LOG_POINTS = 12


def write_run_inputs(workspace: Path, code: str, run_config: dict) -> None:
    """Fabricate the engine-side input files (used by tests and the selftest)."""
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    (workspace / CANDIDATE_SOURCE).write_text(code, encoding="utf-8")
    (workspace / RUN_CONFIG).write_text(
        json.dumps(run_config, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _read_inputs(workspace: Path) -> tuple[str, dict]:
    source_path = workspace / CANDIDATE_SOURCE
    config_path = workspace / RUN_CONFIG
    if not source_path.exists():
        raise ToyTrainerError(f"workspace is missing {CANDIDATE_SOURCE}")
    if not config_path.exists():
        raise ToyTrainerError(f"workspace is missing {RUN_CONFIG}")
    code = source_path.read_text(encoding="utf-8")
    try:
        run_config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ToyTrainerError(f"{RUN_CONFIG} is not valid JSON: {exc}")
    if not isinstance(run_config, dict):
        raise ToyTrainerError(f"{RUN_CONFIG} must hold a JSON object")
    return code, run_config


def _write_metrics(workspace: Path, payload: dict) -> None:
    (workspace / METRICS_JSON).write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _val_batch(data: torch.Tensor, batch: int, window: int) -> torch.Tensor:
    """Fixed evenly-spaced windows from the held-out tail."""
    span = data.shape[0] - window
    if span < 1:
        raise ToyTrainerError("corpus tail is too small for the context length")
    starts = torch.linspace(0, span, steps=batch, dtype=torch.long)
    return torch.stack([data[s : s + window] for s in starts])


def _train(
    workspace: Path, code: str, run_config: dict, config: ToyTrainConfig
) -> tuple[list[tuple[int, float]], dict[str, float]]:
    seed = int(run_config.get("seed", 0))
    token_budget = int(run_config.get("token_budget", 1_000_000))
    sample_cap = min(config.eval_sample_cap, int(run_config.get("eval_sample_cap", 500)))
    model_scale = float(run_config.get("model_scale", 1.0))
    if sample_cap < 1:
        raise ToyTrainerError("eval_sample_cap must be positive")

    torch.set_num_threads(1)
    torch.manual_seed(seed)

    mixer_cls = load_mixer_class(code)
    tokenizer = CharTokenizer()
    data = torch.tensor(tokenizer.encode(generate_corpus()), dtype=torch.long)
    split = int(data.shape[0] * (1.0 - VAL_FRACTION))
    train_data, val_data = data[:split], data[split:]

    width = config.model_width(model_scale)
    model = TokenMixerLM(
        tokenizer.vocab_size, width, config.eff_heads, config.eff_layers, mixer_cls
    )
    steps = config.steps_for_budget(token_budget)
    warmup = max(1, int(steps * config.warmup_frac))
    optimizer = torch.optim.AdamW(model.parameters(), lr=config.peak_lr)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda s: min(1.0, (s + 1) / warmup)
    )

    window = config.eff_context + 1
    generator = torch.Generator().manual_seed(seed)
    val_tokens = _val_batch(val_data, config.eff_batch, window)
    log_every = max(1, steps // LOG_POINTS)
    curve: list[tuple[int, float]] = []

    with (workspace / PROGRESS_LOG).open("a", encoding="utf-8") as progress:
        for step in range(1, steps + 1):
            starts = torch.randint(
                0, train_data.shape[0] - window, (config.eff_batch,), generator=generator
            )
            batch = torch.stack([train_data[s : s + window] for s in starts])
            model.train()
            loss = model.next_char_loss(batch)
            if not math.isfinite(float(loss.detach())):
                raise ToyTrainerError(f"training loss became non-finite at step {step}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP)
            optimizer.step()
            schedule.step()
            if step % log_every == 0 or step == steps:
                model.eval()
                with torch.no_grad():
                    val_loss = float(model.next_char_loss(val_tokens))
                if not math.isfinite(val_loss) or val_loss <= 0.0:
                    raise ToyTrainerError(
                        f"validation loss left its valid range at step {step}"
                    )
                logged = round(val_loss, 8)
                curve.append((step, logged))
                progress.write(f"STEP {step} LOSS {logged:.8f}\n")
                progress.flush()

    benchmarks = {
        name: score_probes(model, tokenizer, build_probes(name, sample_cap))
        for name in PROBE_NAMES
    }
    return curve, benchmarks


def run_trainer(workspace: Path, config: ToyTrainConfig | None = None) -> int:
    """Execute one run; returns the process exit code (0 ok, 1 error)."""
    workspace = Path(workspace)
    config = config or ToyTrainConfig()
    start = time.monotonic()
    curve: list[tuple[int, float]] = []
    try:
        code, run_config = _read_inputs(workspace)
        curve, benchmarks = _train(workspace, code, run_config, config)
        payload = {
            "status": "ok",
            "loss_curve": [[step, loss] for step, loss in curve],
            "benchmarks": benchmarks,
            "wall_seconds": time.monotonic() - start,
            "error_log": "",
        }
        _write_metrics(workspace, payload)
        return 0
    except Exception:
        detail = traceback.format_exc()[-2000:]
        logger.error("run failed:\n%s", detail)
        payload = {
            "status": "error",
            "loss_curve": [[step, loss] for step, loss in curve],
            "benchmarks": {},
            "wall_seconds": time.monotonic() - start,
            "error_log": detail,
        }
        try:
            _write_metrics(workspace, payload)
        except OSError:
            logger.error("could not write error metrics to %s", workspace)
        return 1
