"""Deterministic synthetic corpus and character tokenizer.

The corpus is generated from a seeded grammar (simple English-like sentences
with consistent subject-verb number agreement) so the whole package stays a
pure function of code: no downloads, no committed megabytes, byte-identical
text on every machine.
"""

from __future__ import annotations

import random
from functools import lru_cache

from . import ToyTrainerError

ALPHABET = "abcdefghijklmnopqrstuvwxyz .|\n"

CORPUS_SEED = 11
CORPUS_CHARS = 400_000

# (singular, plural) noun forms
NOUNS = [
    ("cat", "cats"),
    ("dog", "dogs"),
    ("bird", "birds"),
    ("fox", "foxes"),
    ("farmer", "farmers"),
    ("river", "rivers"),
    ("engine", "engines"),
    ("cloud", "clouds"),
    ("stone", "stones"),
    ("garden", "gardens"),
    ("sailor", "sailors"),
    ("lantern", "lanterns"),
]

# (third-person singular, plural) verb forms
VERBS = [
    ("sleeps", "sleep"),
    ("runs", "run"),
    ("sings", "sing"),
    ("waits", "wait"),
    ("turns", "turn"),
    ("drifts", "drift"),
    ("hums", "hum"),
    ("glows", "glow"),
]

ADJECTIVES = [
    "small",
    "old",
    "quiet",
    "bright",
    "heavy",
    "pale",
    "warm",
    "distant",
]

PLACES = [
    "near the river",
    "by the garden",
    "under the cloud",
    "behind the stone",
    "beside the engine",
    "past the lantern",
]


def _sentence(rng: random.Random) -> str:
    plural = rng.random() < 0.5
    noun = rng.choice(NOUNS)[1 if plural else 0]
    verb = rng.choice(VERBS)[1 if plural else 0]
    words = ["the"]
    if rng.random() < 0.6:
        words.append(rng.choice(ADJECTIVES))
    words.append(noun)
    words.append(verb)
    if rng.random() < 0.7:
        words.append(rng.choice(PLACES))
    return " ".join(words) + " ."


@lru_cache(maxsize=2)
def generate_corpus(n_chars: int = CORPUS_CHARS, seed: int = CORPUS_SEED) -> str:
    """The bundled training text: seeded, so identical everywhere."""
    rng = random.Random(seed)
    parts: list[str] = []
    size = 0
    while size < n_chars:
        line = " ".join(_sentence(rng) for _ in range(rng.randint(2, 4))) + "\n"
        parts.append(line)
        size += len(line)
    return "".join(parts)


class CharTokenizer:
    """Total mapping over the fixed alphabet; unknown characters are an error
    so corpus or probe drift fails loudly."""

    def __init__(self) -> None:
        self.alphabet = ALPHABET
        self._index = {ch: i for i, ch in enumerate(ALPHABET)}

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise ToyTrainerError(f"character {exc.args[0]!r} is outside the alphabet")

    def decode(self, ids: list[int]) -> str:
        try:
            return "".join(self.alphabet[i] for i in ids)
        except IndexError:
            raise ToyTrainerError("token id outside the alphabet")
