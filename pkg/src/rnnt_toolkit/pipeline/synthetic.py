"""Synthetic transduction tasks standing in for a speech corpus.

Each transcript character (class) owns a one-hot code; an utterance's
features repeat the code of every character for ``frames_per_label`` frames
(plus or minus ``jitter``) and add Gaussian noise. Two transcript sources:

* ``labels``: random strings over the first ``num_labels`` graphemes,
  never repeating a character twice in a row;
* ``text``: sentences from a seeded lexicon and a first-order Markov grammar
  over words, with spaces between words.

In text mode ``sound_classes`` can make the acoustics ambiguous: letters are
then mapped (seeded, many-to-one) onto that many acoustic classes, so the
spelling of a word is recoverable only through knowledge of the lexicon.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..units import GRAPHEMES, SPACE, GraphemeVocab, PhonemeVocab, SoundClassVocab, load_vocab, save_vocab
from .data import Utterance, atomic_write_text, read_features, read_transcripts, write_features, write_transcripts

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SyntheticTask:
    mode: str = "labels"  # "labels" or "text"
    seed: int = 0
    frames_per_label: int = 3
    jitter: int = 0
    noise: float = 0.1
    feature_dim: int | None = None  # None = number of classes
    # labels mode
    num_labels: int = 20
    min_labels: int = 3
    max_labels: int = 8
    # text mode
    alphabet_size: int = 10
    lexicon_size: int = 40
    min_word_length: int = 2
    max_word_length: int = 6
    successors: int = 3
    min_words: int = 1
    max_words: int = 4
    lm_sentences: int = 0  # extra text-only sentences for LM pre-training
    sound_classes: int | None = None  # None = one acoustic class per letter
    # split sizes; None = 10% of the utterances each
    dev_size: int | None = None
    test_size: int | None = None

    def __post_init__(self):
        if self.mode not in ("labels", "text"):
            raise ValueError(f"mode must be 'labels' or 'text', got {self.mode!r}")
        if self.frames_per_label < 1 or self.jitter < 0 or self.jitter >= self.frames_per_label:
            raise ValueError("need frames_per_label >= 1 and 0 <= jitter < frames_per_label")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.mode == "labels":
            if not 2 <= self.num_labels <= len(GRAPHEMES):
                raise ValueError(f"num_labels must lie in [2, {len(GRAPHEMES)}]")
            if self.min_labels < 1:
                raise ValueError("utterances need at least one label")
            if self.max_labels < self.min_labels:
                raise ValueError("max_labels < min_labels")
        else:
            if not 2 <= self.alphabet_size <= 26:
                raise ValueError("alphabet_size must lie in [2, 26]")
            if self.min_words < 1 or self.max_words < self.min_words:
                raise ValueError("need 1 <= min_words <= max_words")
            if self.min_word_length < 1 or self.max_word_length < self.min_word_length:
                raise ValueError("need 1 <= min_word_length <= max_word_length")
            if self.sound_classes is not None and not 1 <= self.sound_classes <= self.alphabet_size:
                raise ValueError("sound_classes must lie in [1, alphabet_size]")
        if self.feature_dim is not None and self.feature_dim < self.num_classes:
            raise ValueError(f"feature_dim {self.feature_dim} smaller than {self.num_classes} classes")

    @property
    def vocab(self) -> GraphemeVocab:
        if self.mode == "labels":
            return GraphemeVocab(GRAPHEMES[: self.num_labels], with_space=False)
        return GraphemeVocab(GRAPHEMES[: self.alphabet_size], with_space=True)

    @property
    def num_classes(self) -> int:
        """Distinct acoustic codes (the space keeps a class of its own)."""
        if self.mode == "labels":
            return self.num_labels
        return (self.sound_classes or self.alphabet_size) + 1

    def acoustic_class(self) -> dict[str, int]:
        """Transcript character -> index of its acoustic code."""
        units = self.vocab.units
        if self.mode == "labels" or self.sound_classes is None:
            return {u: i for i, u in enumerate(units)}
        k = self.sound_classes
        # every class gets at least one letter; the rest are assigned at random
        rng = np.random.default_rng([self.seed, 2])
        letters = rng.permutation(self.alphabet_size)
        cls = np.empty(self.alphabet_size, dtype=np.int64)
        cls[letters[:k]] = np.arange(k)
        cls[letters[k:]] = rng.integers(0, k, size=self.alphabet_size - k)
        mapping = {GRAPHEMES[i]: int(cls[i]) for i in range(self.alphabet_size)}
        mapping[SPACE] = k
        return mapping

    @property
    def dim(self) -> int:
        return self.feature_dim or self.num_classes

    @property
    def phoneme_vocab(self):
        """Pronunciation units: the acoustic classes when they differ from letters."""
        if self.mode == "text" and self.sound_classes is not None:
            return SoundClassVocab({ch: c for ch, c in self.acoustic_class().items() if ch != SPACE})
        return PhonemeVocab()


@dataclass
class Grammar:
    """Word lexicon with start, successor and stop probabilities."""

    words: list[str]
    start: np.ndarray
    successors: list[tuple[np.ndarray, np.ndarray]]  # (word ids, probabilities)

    def sentence(self, rng: np.random.Generator, min_words: int, max_words: int) -> str:
        n = int(rng.integers(min_words, max_words + 1))
        w = int(rng.choice(len(self.words), p=self.start))
        out = [w]
        while len(out) < n:
            ids, p = self.successors[w]
            w = int(ids[rng.choice(len(ids), p=p)])
            out.append(w)
        return SPACE.join(self.words[i] for i in out)


def build_grammar(spec: SyntheticTask, rng: np.random.Generator) -> Grammar:
    letters = list(GRAPHEMES[: spec.alphabet_size])
    words: list[str] = []
    seen = set()
    while len(words) < spec.lexicon_size:
        length = int(rng.integers(spec.min_word_length, spec.max_word_length + 1))
        w = "".join(rng.choice(letters, size=length))
        if w not in seen:
            seen.add(w)
            words.append(w)
    # Zipf-like start distribution so some words are much more frequent
    start = 1.0 / np.arange(1, len(words) + 1)
    start /= start.sum()
    k = min(spec.successors, len(words))
    successors = []
    for _ in words:
        ids = rng.choice(len(words), size=k, replace=False)
        successors.append((ids, rng.dirichlet(np.ones(k))))
    return Grammar(words, start, successors)


@dataclass
class Dataset:
    spec: SyntheticTask
    train: list[Utterance]
    dev: list[Utterance]
    test: list[Utterance]
    lm_text: list[str] = field(default_factory=list)

    @property
    def vocab(self) -> GraphemeVocab:
        return self.spec.vocab

    def split(self, name: str) -> list[Utterance]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def lm_corpus(self) -> list[str]:
        """Training text for LM pre-training: train transcripts plus extra text."""
        return [u.transcript for u in self.train] + list(self.lm_text)

    def word_counts(self) -> dict[str, int]:
        return dict(Counter(w for s in self.lm_corpus() for w in s.split()))


def render_features(transcript: str, spec: SyntheticTask, rng: np.random.Generator) -> np.ndarray:
    classes = spec.acoustic_class()
    rows = []
    for ch in transcript:
        n = spec.frames_per_label
        if spec.jitter:
            n += int(rng.integers(-spec.jitter, spec.jitter + 1))
        rows += [classes[ch]] * n
    feats = np.zeros((len(rows), spec.dim))
    feats[np.arange(len(rows)), rows] = 1.0
    if spec.noise:
        feats += spec.noise * rng.standard_normal(feats.shape)
    return feats.astype(np.float32)


def _random_labels(spec: SyntheticTask, rng: np.random.Generator) -> str:
    n = int(rng.integers(spec.min_labels, spec.max_labels + 1))
    out = [int(rng.integers(spec.num_labels))]
    for _ in range(n - 1):
        # draw from the other num_labels - 1 symbols
        k = int(rng.integers(spec.num_labels - 1))
        out.append(k + (k >= out[-1]))
    return "".join(GRAPHEMES[k] for k in out)


def make_utterance(uid: str, transcript: str, spec: SyntheticTask, rng: np.random.Generator) -> Utterance:
    if not transcript:
        raise ValueError(f"{uid}: an utterance needs at least one label")
    return Utterance(uid, render_features(transcript, spec, rng), transcript)


def _split_sizes(spec: SyntheticTask, n: int) -> tuple[int, int, int]:
    dev = n // 10 if spec.dev_size is None else spec.dev_size
    test = n // 10 if spec.test_size is None else spec.test_size
    if dev < 0 or test < 0 or dev + test >= n:
        raise ValueError(f"cannot split {n} utterances into dev={dev}, test={test} and a non-empty train set")
    return n - dev - test, dev, test


def generate_task(spec: SyntheticTask, n: int) -> Dataset:
    """``n`` utterances split train/dev/test in generation order; deterministic in ``spec.seed``."""
    sizes = _split_sizes(spec, n)
    rng = np.random.default_rng(spec.seed)
    grammar = build_grammar(spec, rng) if spec.mode == "text" else None

    def transcript():
        if grammar is None:
            return _random_labels(spec, rng)
        return grammar.sentence(rng, spec.min_words, spec.max_words)

    utts = [make_utterance(f"utt{i:05d}", transcript(), spec, rng) for i in range(n)]
    lm_text = [transcript() for _ in range(spec.lm_sentences)]
    a, b = sizes[0], sizes[0] + sizes[1]
    return Dataset(spec, utts[:a], utts[a:b], utts[b:], lm_text)


def save_task(dataset: Dataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / "task.yaml", yaml.safe_dump(asdict(dataset.spec), sort_keys=True))
    save_vocab(dataset.vocab, d / "vocab.txt")
    for name in SPLITS:
        utts = dataset.split(name)
        write_features(d / f"{name}.feats", utts)
        write_transcripts(d / f"{name}.tsv", ((u.uid, u.transcript) for u in utts))
    atomic_write_text(d / "lm_corpus.txt", "".join(s + "\n" for s in dataset.lm_corpus()))
    counts = dataset.word_counts()
    atomic_write_text(d / "counts.tsv", "".join(f"{w}\t{counts[w]}\n" for w in sorted(counts)))


def load_split(directory: str | Path, name: str) -> list[Utterance]:
    d = Path(directory)
    texts = read_transcripts(d / f"{name}.tsv")
    utts = []
    for uid, feats in read_features(d / f"{name}.feats"):
        if uid not in texts:
            raise ValueError(f"{uid}: no transcript in {name}.tsv")
        utts.append(Utterance(uid, feats, texts[uid]))
    return utts


def load_task(directory: str | Path) -> Dataset:
    d = Path(directory)
    spec = SyntheticTask(**yaml.safe_load((d / "task.yaml").read_text(encoding="utf-8")))
    if load_vocab(d / "vocab.txt").units != spec.vocab.units:
        raise ValueError(f"{d}: vocab.txt does not match task.yaml")
    splits = {name: load_split(d, name) for name in SPLITS}
    n_train = len(splits["train"])
    corpus = [ln for ln in (d / "lm_corpus.txt").read_text(encoding="utf-8").split("\n") if ln]
    return Dataset(spec, splits["train"], splits["dev"], splits["test"], corpus[n_train:])
