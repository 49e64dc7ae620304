"""Synthetic speech-like corpora, dataset files and padded batches.

Every character owns a fixed prototype feature vector. An utterance repeats the
prototype of each character for a random number of frames, then applies a
per-utterance speaker transform (random scale and offset) and frame noise. The
transcript therefore determines the content while the speaker nuisance does
not appear in the text at all.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .vocab import Vocab


@dataclass
class Utterance:
    id: str
    features: np.ndarray | None = None
    text: str | None = None

    def __post_init__(self):
        if self.features is None and self.text is None:
            raise FormatError(f"utterance {self.id!r} has neither features nor text")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float)
            if self.features.ndim != 2:
                raise FormatError(f"utterance {self.id!r}: features must be a (T, D) matrix")

    @property
    def is_paired(self) -> bool:
        return self.features is not None and self.text is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance) or other.id != self.id or other.text != self.text:
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)


@dataclass
class SynthSpec:
    """Parameters of the synthetic acoustic world.

    ``world_seed`` fixes the character prototypes, the word lexicon and the
    word-transition structure shared by every split.
    """

    letters: str = "abcdefgh"
    feat_dim: int = 12
    dur_min: int = 5
    dur_max: int = 7
    noise_std: float = 0.05
    speaker_offset_std: float = 0.5
    speaker_scale: tuple = (0.8, 1.2)
    lexicon_size: int = 24
    word_len: tuple = (2, 4)
    successors: int = 3
    world_seed: int = 0

    def __post_init__(self):
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ConfigError(f"duration range must satisfy 1 <= min <= max, got [{self.dur_min}, {self.dur_max}]")
        if self.noise_std < 0 or self.speaker_offset_std < 0:
            raise ConfigError("noise and speaker-offset deviations must be non-negative")
        lo, hi = self.speaker_scale
        if not 0 < lo <= hi:
            raise ConfigError(f"speaker scale range must be positive and ordered, got {self.speaker_scale}")
        if self.feat_dim < 1 or not self.letters:
            raise ConfigError("feature dimension and letter set must be non-empty")
        if not 1 <= self.word_len[0] <= self.word_len[1]:
            raise ConfigError(f"invalid word length range {self.word_len}")

    @property
    def chars(self) -> str:
        return self.letters + " "

    def vocab(self) -> Vocab:
        return Vocab(self.chars)


class SynthWorld:
    """Prototypes, lexicon and word bigram structure drawn from ``world_seed``."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.world_seed)
        self.prototypes = {ch: rng.normal(size=spec.feat_dim) for ch in spec.chars}
        words: list[str] = []
        lo, hi = spec.word_len
        max_distinct = sum(len(spec.letters) ** n for n in range(lo, hi + 1))
        target = min(spec.lexicon_size, max_distinct)
        while len(words) < target:
            n = int(rng.integers(lo, hi + 1))
            w = "".join(rng.choice(list(spec.letters), size=n))
            if w not in words:
                words.append(w)
        self.lexicon = words
        k = min(spec.successors, len(words))
        self.successors = [rng.choice(len(words), size=k, replace=False) for _ in words]

    def sample_text(self, n_words: int, rng: np.random.Generator) -> str:
        w = int(rng.integers(len(self.lexicon)))
        out = [self.lexicon[w]]
        for _ in range(n_words - 1):
            w = int(rng.choice(self.successors[w]))
            out.append(self.lexicon[w])
        return " ".join(out)

    def render(self, text: str, rng: np.random.Generator, durations: Sequence[int] | None = None) -> np.ndarray:
        """Acoustic features for ``text`` with a fresh speaker and noise draw."""
        spec = self.spec
        if durations is None:
            durations = rng.integers(spec.dur_min, spec.dur_max + 1, size=len(text))
        frames = np.concatenate([np.tile(self.prototypes[ch], (int(d), 1)) for ch, d in zip(text, durations)])
        scale = rng.uniform(*spec.speaker_scale)
        offset = rng.normal(0.0, spec.speaker_offset_std, size=spec.feat_dim) if spec.speaker_offset_std else 0.0
        noise = rng.normal(0.0, spec.noise_std, size=frames.shape) if spec.noise_std else 0.0
        return scale * frames + offset + noise


def synth_generate(spec: SynthSpec, n_utts: int, len_range: tuple = (2, 3), seed: int = 0,
                   prefix: str = "utt", with_features: bool = True, with_text: bool = True) -> list[Utterance]:
    """Draw ``n_utts`` utterances whose transcripts hold ``len_range`` words."""
    lo, hi = len_range
    if n_utts < 0 or not 1 <= lo <= hi:
        raise ConfigError(f"invalid utterance count {n_utts} or word range {len_range}")
    world = SynthWorld(spec)
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n_utts):
        text = world.sample_text(int(rng.integers(lo, hi + 1)), rng)
        feats = world.render(text, rng)
        utts.append(Utterance(f"{prefix}{i:05d}", feats if with_features else None, text if with_text else None))
    return utts


SPLIT_SIZES = {"paired": 50, "unpaired": 200, "text": 300, "val": 30, "eval": 30}


def synth_corpus(spec: SynthSpec, seed: int = 0, sizes: dict | None = None,
                 len_range: tuple = (2, 3)) -> dict[str, list[Utterance]]:
    """All benchmark splits with disjoint ids.

    ``unpaired`` keeps its true transcripts so the oracle condition can use
    them; :func:`strip_text` removes them for unpaired training.
    """
    sizes = {**SPLIT_SIZES, **(sizes or {})}
    out = {}
    for k, (name, n) in enumerate(sizes.items()):
        out[name] = synth_generate(spec, n, len_range, seed=seed * 1000 + k, prefix=f"{name}-",
                                   with_features=(name != "text"))
    return out


def strip_text(utts: Iterable[Utterance]) -> list[Utterance]:
    return [Utterance(u.id, u.features, None) for u in utts]


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------


def save_utterances(utts: Iterable[Utterance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in utts:
            rec = {"id": u.id}
            if u.text is not None:
                rec["text"] = u.text
            if u.features is not None:
                rec["features"] = u.features.tolist()
            fh.write(json.dumps(rec) + "\n")


def load_utterances(path) -> list[Utterance]:
    utts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict) or "id" not in rec:
                raise FormatError(f"{path}:{lineno}: record must be an object with an 'id'")
            feats = rec.get("features")
            if feats is not None:
                widths = {len(row) for row in feats}
                if len(widths) != 1 or not feats:
                    raise FormatError(f"{path}:{lineno}: inconsistent feature row widths {sorted(widths)}")
            try:
                utts.append(Utterance(str(rec["id"]), feats, rec.get("text")))
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return utts


def dataset_io(path, direction: str = "load", utts: Iterable[Utterance] | None = None):
    if direction == "load":
        return load_utterances(path)
    if direction == "save":
        save_utterances(utts or [], path)
        return list(utts or [])
    raise ConfigError(f"direction must be 'load' or 'save', got {direction!r}")


def load_texts(path) -> list[str]:
    """Plain-text corpus, one sentence per line (blank lines skipped)."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    return [ln for ln in lines if ln.strip()]


def save_texts(texts: Iterable[str], path) -> None:
    Path(path).write_text("".join(t + "\n" for t in texts), encoding="utf-8")


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    ids: list
    feats: np.ndarray | None = None
    feat_lengths: np.ndarray | None = None
    tokens: np.ndarray | None = None
    token_lengths: np.ndarray | None = None
    texts: list = field(default_factory=list)

    @property
    def feat_mask(self) -> np.ndarray:
        return np.arange(self.feats.shape[1])[None, :] < self.feat_lengths[:, None]

    @property
    def token_mask(self) -> np.ndarray:
        return np.arange(self.tokens.shape[1])[None, :] < self.token_lengths[:, None]

    def __len__(self) -> int:
        return len(self.ids)


def pad_features(feats: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(f) for f in feats])
    out = np.zeros((len(feats), lengths.max(), feats[0].shape[1]))
    for i, f in enumerate(feats):
        out[i, :len(f)] = f
    return out, lengths


def pad_tokens(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), lengths.max()), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, lengths


def make_batch(utts: Sequence[Utterance], vocab: Vocab | None = None) -> Batch:
    batch = Batch([u.id for u in utts])
    if all(u.features is not None for u in utts):
        batch.feats, batch.feat_lengths = pad_features([u.features for u in utts])
    if all(u.text is not None for u in utts):
        batch.texts = [u.text for u in utts]
        if vocab is not None:
            batch.tokens, batch.token_lengths = pad_tokens([vocab.encode(t) for t in batch.texts], vocab.pad_id)
    return batch


def batchify(utts: Sequence[Utterance], batch_size: int, vocab: Vocab | None = None, sort: bool = True,
             rng: np.random.Generator | None = None) -> list[Batch]:
    """Length-sorted buckets of at most ``batch_size`` utterances.

    With ``rng`` the order of the buckets is shuffled.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    utts = list(utts)
    if sort:
        utts.sort(key=lambda u: -(len(u.features) if u.features is not None else len(u.text or "")))
    batches = [make_batch(utts[i:i + batch_size], vocab) for i in range(0, len(utts), batch_size)]
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


def n_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
