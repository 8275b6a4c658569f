"""Wordpiece inventory induction and sentence segmentation.

The vocabulary always starts with every grapheme of the inventory as a
single-character piece, followed by the space piece, followed by induced
multi-character pieces in the order they were created. Induction merges the
most frequent adjacent pair of pieces inside words (weighted by word count);
segmentation is greedy longest-match-first, word by word, with the space
piece between words.
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

from .errors import VocabularyError
from .units import GRAPHEMES, SPACE, SPACE_TOKEN, check_inventory, read_vocab_file, save_vocab, vocab_hash

log = logging.getLogger(__name__)


def counts_hash(counts: Mapping[str, int]) -> str:
    h = hashlib.sha256()
    for word in sorted(counts):
        h.update(f"{word}\t{counts[word]}\n".encode("utf-8"))
    return h.hexdigest()


class WordpieceVocab:
    family = "wordpiece"

    def __init__(self, pieces: Sequence[str], counts_hash: str = "", merges=None, graphemes: str = GRAPHEMES):
        self.units: tuple[str, ...] = tuple(pieces)
        if len(set(self.units)) != len(self.units):
            raise VocabularyError("duplicate wordpieces")
        if self.units.count(SPACE) != 1:
            raise VocabularyError("the space piece must appear exactly once")
        missing = [g for g in graphemes if g not in self.units]
        if missing:
            raise VocabularyError(f"graphemes missing from wordpiece vocab: {''.join(missing)}")
        self.graphemes = graphemes
        self.counts_hash = counts_hash
        self.merges = list(merges or [])
        self._index = {p: i for i, p in enumerate(self.units)}
        self._max_len = max(len(p) for p in self.units)

    def __len__(self) -> int:
        return len(self.units)

    def __contains__(self, piece: str) -> bool:
        return piece in self._index

    @property
    def hash(self) -> str:
        return vocab_hash(self.family, self.units)

    @property
    def space_id(self) -> int:
        return self._index[SPACE]

    def segment_word(self, word: str) -> list[str]:
        pieces = []
        i = 0
        while i < len(word):
            for n in range(min(self._max_len, len(word) - i), 0, -1):
                if word[i : i + n] in self._index:
                    pieces.append(word[i : i + n])
                    i += n
                    break
            else:  # unreachable while every grapheme is a piece
                raise VocabularyError(f"cannot segment {word!r} at {i}")
        return pieces

    def encode(self, text: str) -> list[int]:
        return [self._index[p] for p in segment_sentence(text, self)]

    def decode(self, ids: Sequence[int]) -> str:
        return detokenize([self.units[i] for i in ids])

    def render(self, ids: Sequence[int]) -> list[str]:
        return [f"<{'space' if self.units[i] == SPACE else self.units[i]}>" for i in ids]

    def save(self, path: str | Path) -> None:
        save_vocab(self, path, extra_header=f"counts_sha256={self.counts_hash}")

    @classmethod
    def load(cls, path: str | Path) -> "WordpieceVocab":
        header, units = read_vocab_file(path)
        if header.get("family") != "wordpiece":
            raise VocabularyError(f"{path}: not a wordpiece vocab")
        graphemes = "".join(u for u in units if len(u) == 1 and u != SPACE)
        return cls(units, counts_hash=header.get("counts_sha256", ""), graphemes=graphemes)


def _validate_counts(counts: Mapping[str, int], graphemes: str) -> None:
    for word, c in counts.items():
        if not word:
            raise ValueError("empty word in counts")
        check_inventory(word, graphemes)
        if c <= 0:
            raise ValueError(f"count for {word!r} must be positive, got {c}")


def train_vocab(counts: Mapping[str, int], target_size: int, graphemes: str = GRAPHEMES) -> WordpieceVocab:
    """Induce ``target_size`` pieces by count-weighted pair merging.

    Ties between equally frequent pairs go to the lexicographically smallest
    ``(left, right)``. If every word has collapsed into a single piece before
    ``target_size`` is reached, the smaller vocabulary is returned.
    """
    floor = len(graphemes) + 1
    if target_size < floor:
        raise ValueError(f"vocabulary size {target_size} below the grapheme floor {floor}")
    _validate_counts(counts, graphemes)
    pieces = list(graphemes) + [SPACE]
    known = set(pieces)
    words = {w: (tuple(w), c) for w, c in sorted(counts.items())}
    merges = []
    while len(pieces) < target_size:
        pairs: Counter = Counter()
        for symbols, c in words.values():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += c
        if not pairs:
            log.warning("corpus exhausted at %d pieces (asked for %d)", len(pieces), target_size)
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merges.append(best)
        merged = best[0] + best[1]
        if merged not in known:
            known.add(merged)
            pieces.append(merged)
        for w, (symbols, c) in words.items():
            if len(symbols) < 2:
                continue
            out = []
            i = 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[w] = (tuple(out), c)
    return WordpieceVocab(pieces, counts_hash=counts_hash(counts), merges=merges, graphemes=graphemes)


def segment_sentence(sentence: str, vocab: WordpieceVocab) -> list[str]:
    """Pieces for ``sentence``; words are separated by the space piece."""
    if sentence == "":
        return []
    check_inventory(sentence, vocab.graphemes + SPACE)
    words = sentence.split(SPACE)
    if any(w == "" for w in words):
        raise ValueError(f"words must be separated by single spaces: {sentence!r}")
    out: list[str] = []
    for i, word in enumerate(words):
        if i:
            out.append(SPACE)
        out.extend(vocab.segment_word(word))
    return out


def detokenize(pieces: Sequence[str]) -> str:
    return "".join(pieces)


def render(pieces: Sequence[str]) -> str:
    """Angle-bracket display form, e.g. ``<tor> <to> <ise> <space> <and>``."""
    return " ".join(f"<{SPACE_TOKEN[1:-1] if p == SPACE else p}>" for p in pieces)


def read_counts(path: str | Path) -> dict[str, int]:
    """``word<TAB>count`` (or whitespace separated) per line; ``#`` lines are comments."""
    counts: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'word count'")
        counts[parts[0]] = counts.get(parts[0], 0) + int(parts[1])
    return counts
