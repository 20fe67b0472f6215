"""Synthetic paired speech-translation corpus and its manifest format.

Each example is (features, transcript, translation). The transcript is
a few words from a closed lowercase lexicon joined by spaces; features
are one one-hot row per character (letters plus a space channel, so
F = |alphabet| + 1) repeated for a random duration and perturbed with
Gaussian noise. The translation maps every word to its uppercase twin
and reverses the word order, so the token vocabularies are disjoint
and the translator must reorder, not just copy.

Word shapes avoid adjacent repeated letters, which keeps every
transcript CTC-feasible at one frame per character.

Manifest layout (line-oriented, UTF-8):
    #stlab-manifest <version>
    #config <json>
    #source_lexicon <w1> <w2> ...
    #lexicon_sha256 <hex>
    #n_examples <N>
    #fields id n_frames feature_dim transcript translation features
then one tab-separated record per example, features as base64 of
little-endian float64 bytes in row-major order. Round trips are
bit-exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataFormatError

MANIFEST_FORMAT = "#stlab-manifest"
MANIFEST_VERSION = 1
RECORD_FIELDS = ("id", "n_frames", "feature_dim", "transcript", "translation", "features")


@dataclass(frozen=True)
class GeneratorConfig:
    n_examples: int = 2200
    test_count: int = 200
    seed: int = 0
    lexicon_seed: int = 1000
    alphabet: str = "abcdefghij"
    n_words: int = 24
    word_len_range: tuple[int, int] = (2, 4)
    words_range: tuple[int, int] = (1, 3)
    dur_range: tuple[int, int] = (1, 3)
    noise_sigma: float = 0.05

    def validate(self) -> None:
        if self.n_examples < 1 or not 0 <= self.test_count < self.n_examples:
            raise ConfigError("need n_examples > test_count >= 0")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ConfigError("alphabet must be non-empty without duplicates")
        if " " in self.alphabet:
            raise ConfigError("space is reserved as the word separator")
        for name in ("word_len_range", "words_range", "dur_range"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.n_words < 2:
            raise ConfigError("need at least 2 lexicon words")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    @property
    def feature_dim(self) -> int:
        return len(self.alphabet) + 1


@dataclass(frozen=True)
class Example:
    id: str
    features: np.ndarray
    transcript: str
    translation: tuple[str, ...]


@dataclass
class Dataset:
    config: GeneratorConfig
    source_lexicon: tuple[str, ...]
    examples: list[Example] = field(default_factory=list)

    @property
    def char_symbols(self) -> list[str]:
        return list(self.config.alphabet) + [" "]

    @property
    def target_lexicon(self) -> tuple[str, ...]:
        return tuple(w.upper() for w in self.source_lexicon)

    @property
    def token_words(self) -> list[str]:
        """Both lexicons in embedding-table order: source first, then target."""
        return list(self.source_lexicon) + list(self.target_lexicon)

    def split(self) -> tuple["Dataset", "Dataset"]:
        """(train, test): the last test_count examples are held out."""
        cut = len(self.examples) - self.config.test_count
        train = Dataset(self.config, self.source_lexicon, self.examples[:cut])
        test = Dataset(self.config, self.source_lexicon, self.examples[cut:])
        return train, test


def translate_words(words: Sequence[str]) -> tuple[str, ...]:
    """Word-for-word uppercase mapping with sentence-level reversal."""
    return tuple(w.upper() for w in reversed(words))


def _make_word(rng, alphabet: str, length: int) -> str:
    chars = [alphabet[rng.integers(0, len(alphabet))]]
    while len(chars) < length:
        c = alphabet[rng.integers(0, len(alphabet))]
        if c != chars[-1]:
            chars.append(c)
    return "".join(chars)


def make_lexicon(config: GeneratorConfig) -> tuple[str, ...]:
    rng = np.random.default_rng(config.lexicon_seed)
    lo, hi = config.word_len_range
    words: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(words) < config.n_words:
        attempts += 1
        if attempts > 1000 * config.n_words:
            raise ConfigError(
                "cannot draw enough distinct words; enlarge alphabet or word_len_range"
            )
        w = _make_word(rng, config.alphabet, int(rng.integers(lo, hi + 1)))
        if w not in seen:
            seen.add(w)
            words.append(w)
    if seen & {w.upper() for w in words}:
        raise ConfigError("source and target lexicons overlap")
    return tuple(words)


def generate_corpus(config: GeneratorConfig) -> Dataset:
    config.validate()
    lexicon = make_lexicon(config)
    rng = np.random.default_rng(config.seed)
    feat_dim = config.feature_dim
    channel = {c: i for i, c in enumerate(config.alphabet)}
    channel[" "] = feat_dim - 1
    w_lo, w_hi = config.words_range
    d_lo, d_hi = config.dur_range
    examples: list[Example] = []
    for i in range(config.n_examples):
        count = int(rng.integers(w_lo, w_hi + 1))
        words = [lexicon[int(rng.integers(0, len(lexicon)))] for _ in range(count)]
        transcript = " ".join(words)
        rows = []
        for ch in transcript:
            dur = int(rng.integers(d_lo, d_hi + 1))
            row = np.zeros(feat_dim)
            row[channel[ch]] = 1.0
            rows.extend([row] * dur)
        feats = np.asarray(rows) + config.noise_sigma * rng.standard_normal(
            (len(rows), feat_dim)
        )
        feats.flags.writeable = False
        examples.append(
            Example(
                id=f"ex{i:06d}",
                features=feats,
                transcript=transcript,
                translation=translate_words(words),
            )
        )
    return Dataset(config, lexicon, examples)


def _lexicon_digest(lexicon: Sequence[str]) -> str:
    return hashlib.sha256(" ".join(lexicon).encode("utf-8")).hexdigest()


def save_manifest(dataset: Dataset, path: str) -> None:
    cfg = asdict(dataset.config)
    lines = [
        f"{MANIFEST_FORMAT} {MANIFEST_VERSION}",
        "#config " + json.dumps(cfg, sort_keys=True),
        "#source_lexicon " + " ".join(dataset.source_lexicon),
        "#lexicon_sha256 " + _lexicon_digest(dataset.source_lexicon),
        f"#n_examples {len(dataset.examples)}",
        "#fields " + " ".join(RECORD_FIELDS),
    ]
    for ex in dataset.examples:
        feats = base64.b64encode(ex.features.astype("<f8").tobytes()).decode("ascii")
        t, f = ex.features.shape
        lines.append(
            "\t".join([ex.id, str(t), str(f), ex.transcript, " ".join(ex.translation), feats])
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path: str) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read manifest {path}: {exc}") from exc
    if not lines or not lines[0].startswith(MANIFEST_FORMAT):
        raise DataFormatError(f"{path}:1: not a manifest file")
    version = lines[0][len(MANIFEST_FORMAT) :].strip()
    if version != str(MANIFEST_VERSION):
        raise DataFormatError(
            f"{path}:1: manifest version {version} unsupported (reader is {MANIFEST_VERSION})"
        )
    header: dict[str, str] = {}
    body_start = 1
    for idx in range(1, len(lines)):
        if not lines[idx].startswith("#"):
            body_start = idx
            break
        key, _, value = lines[idx][1:].partition(" ")
        header[key] = value
        body_start = idx + 1
    for key in ("config", "source_lexicon", "lexicon_sha256", "n_examples", "fields"):
        if key not in header:
            raise DataFormatError(f"{path}: header is missing #{key}")
    try:
        raw_cfg = json.loads(header["config"])
        for name in ("word_len_range", "words_range", "dur_range"):
            raw_cfg[name] = tuple(raw_cfg[name])
        config = GeneratorConfig(**raw_cfg)
    except (ValueError, TypeError) as exc:
        raise DataFormatError(f"{path}: bad #config header: {exc}") from exc
    config.validate()
    lexicon = tuple(header["source_lexicon"].split())
    if _lexicon_digest(lexicon) != header["lexicon_sha256"]:
        raise DataFormatError(f"{path}: lexicon does not match its digest")
    expected = int(header["n_examples"])
    records = [ln for ln in lines[body_start:] if ln]
    if len(records) != expected:
        raise DataFormatError(
            f"{path}: header promises {expected} records, found {len(records)} (truncated?)"
        )
    examples: list[Example] = []
    for offset, line in enumerate(records):
        lineno = body_start + offset + 1
        parts = line.split("\t")
        if len(parts) != len(RECORD_FIELDS):
            raise DataFormatError(f"{path}:{lineno}: expected {len(RECORD_FIELDS)} fields")
        ex_id, t_str, f_str, transcript, translation, blob = parts
        try:
            t_len, f_dim = int(t_str), int(f_str)
            raw = base64.b64decode(blob, validate=True)
        except (ValueError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: corrupt record: {exc}") from exc
        if f_dim != config.feature_dim:
            raise DataFormatError(f"{path}:{lineno}: feature_dim {f_dim} != config")
        if len(raw) != t_len * f_dim * 8:
            raise DataFormatError(f"{path}:{lineno}: feature payload has wrong size")
        feats = np.frombuffer(raw, dtype="<f8").reshape(t_len, f_dim)
        examples.append(
            Example(
                id=ex_id,
                features=feats,
                transcript=transcript,
                translation=tuple(translation.split()),
            )
        )
    return Dataset(config, lexicon, examples)
