"""Three synthetic multiple-choice probes: copy, recall, and agreement.

Each probe is a prompt plus four single-word options with exactly one correct
answer; the model scores options by length-normalized log-likelihood of the
continuation.  Probe sets are generated from a fixed seed independent of the
training seed, so benchmark scores are a pure function of the trained weights.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass

import torch

from .corpus import NOUNS, VERBS
from .model import TokenMixerLM
from .corpus import CharTokenizer

PROBE_SEED = 2718
PROBE_NAMES = ("copy", "recall", "agreement")

_RECALL_VALUES = [
    "red",
    "blue",
    "green",
    "gold",
    "gray",
    "pink",
    "teal",
    "plum",
]


@dataclass(frozen=True)
class Probe:
    prompt: str
    options: tuple[str, ...]
    answer: int


def _copy_probe(rng: random.Random) -> Probe:
    letters = rng.sample(string.ascii_lowercase, 8)
    prefix_len = rng.randint(3, 6)
    prompt = " ".join(letters) + " | " + " ".join(letters[:prefix_len]) + " "
    correct = letters[prefix_len]
    distractors = rng.sample([c for c in string.ascii_lowercase if c != correct], 3)
    options, answer = _shuffled(rng, correct, distractors)
    return Probe(prompt, options, answer)


def _recall_probe(rng: random.Random) -> Probe:
    nouns = [pair[0] for pair in rng.sample(NOUNS, 3)]
    values = rng.sample(_RECALL_VALUES, 4)
    pairs = list(zip(nouns, values[:3]))
    context = " . ".join(f"the {noun} is {value}" for noun, value in pairs)
    queried, correct = pairs[rng.randrange(3)]
    prompt = f"{context} . the {queried} is "
    distractors = [v for v in values if v != correct][:3]
    options, answer = _shuffled(rng, correct, distractors)
    return Probe(prompt, options, answer)


def _agreement_probe(rng: random.Random) -> Probe:
    plural = rng.random() < 0.5
    noun = rng.choice(NOUNS)[1 if plural else 0]
    verb_pair = rng.choice(VERBS)
    correct = verb_pair[1 if plural else 0]
    wrong_number = verb_pair[0 if plural else 1]
    others = [pair[0 if plural else 1] for pair in rng.sample(VERBS, 4) if pair != verb_pair]
    distractors = [wrong_number] + others[:2]
    options, answer = _shuffled(rng, correct, distractors)
    return Probe(f"the {noun} ", options, answer)


def _shuffled(
    rng: random.Random, correct: str, distractors: list[str]
) -> tuple[tuple[str, ...], int]:
    options = [correct] + list(distractors)
    rng.shuffle(options)
    return tuple(options), options.index(correct)


_BUILDERS = {
    "copy": _copy_probe,
    "recall": _recall_probe,
    "agreement": _agreement_probe,
}


def build_probes(kind: str, count: int, seed: int = PROBE_SEED) -> list[Probe]:
    builder = _BUILDERS[kind]
    rng = random.Random(f"{seed}:{kind}")
    return [builder(rng) for _ in range(count)]


@torch.no_grad()
def score_probes(
    model: TokenMixerLM, tokenizer: CharTokenizer, probes: list[Probe]
) -> float:
    """Accuracy of picking the highest mean-log-likelihood option."""
    model.eval()
    correct = 0
    for probe in probes:
        prompt_ids = tokenizer.encode(probe.prompt)
        sequences = [prompt_ids + tokenizer.encode(option) for option in probe.options]
        width = max(len(s) for s in sequences)
        batch = torch.zeros((len(sequences), width), dtype=torch.long)
        for row, seq in enumerate(sequences):
            batch[row, : len(seq)] = torch.tensor(seq, dtype=torch.long)
        logits = model(batch[:, :-1])
        logprobs = torch.log_softmax(logits, dim=-1)
        scores = []
        for row, seq in enumerate(sequences):
            span = range(len(prompt_ids) - 1, len(seq) - 1)
            picked = [float(logprobs[row, t, seq[t + 1]]) for t in span]
            scores.append(sum(picked) / len(picked))
        if max(range(len(scores)), key=scores.__getitem__) == probe.answer:
            correct += 1
    return correct / len(probes) if probes else 0.0
