"""Output-unit inventories: graphemes, a toy phoneme set, and vocab files.

A vocabulary maps text to label indices ``0..V-1`` (the blank is never part
of it; models append it at index ``V``). Wordpiece vocabularies live in
:mod:`rnnt_toolkit.wordpiece` and follow the same interface.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

from .errors import VocabularyError

GRAPHEMES = "abcdefghijklmnopqrstuvwxyz0123456789&.'%/-:"
SPACE = " "
SPACE_TOKEN = "<space>"


def vocab_hash(family: str, units: Sequence[str]) -> str:
    h = hashlib.sha256()
    h.update(family.encode())
    for u in units:
        h.update(b"\n" + u.encode("utf-8"))
    return h.hexdigest()[:16]


def check_inventory(text: str, allowed: str) -> None:
    for pos, ch in enumerate(text):
        if ch not in allowed:
            raise VocabularyError(f"character {ch!r} at position {pos} is not in the inventory")


class GraphemeVocab:
    """Single-character units; ``symbols`` defaults to the full inventory plus space."""

    family = "grapheme"

    def __init__(self, symbols: str = GRAPHEMES, with_space: bool = True):
        if len(set(symbols)) != len(symbols) or SPACE in symbols:
            raise ValueError("grapheme symbols must be unique and exclude the space")
        self.symbols = symbols
        self.units: tuple[str, ...] = tuple(symbols) + ((SPACE,) if with_space else ())
        self._index = {u: i for i, u in enumerate(self.units)}

    def __len__(self) -> int:
        return len(self.units)

    @property
    def hash(self) -> str:
        return vocab_hash(self.family, self.units)

    def encode(self, text: str) -> list[int]:
        check_inventory(text, "".join(self.units))
        return [self._index[ch] for ch in text]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.units[i] for i in ids)

    def render(self, ids: Sequence[int]) -> list[str]:
        return [SPACE_TOKEN if self.units[i] == SPACE else self.units[i] for i in ids]


# Toy pronunciation: collapse graphemes into coarse sound classes. Only used
# as the target family for low-depth hierarchical CTC taps.
_PHONE_OF = {
    **{c: c for c in "aeiou"},
    "y": "i",
    **{c: "k" for c in "cgkqx"},
    **{c: "s" for c in "sz"},
    **{c: "p" for c in "pb"},
    **{c: "t" for c in "td"},
    **{c: "f" for c in "fvw"},
    **{c: "m" for c in "mn"},
    **{c: "l" for c in "lr"},
    "h": "h",
    "j": "j",
}
PHONES = ("a", "e", "i", "o", "u", "k", "s", "p", "t", "f", "m", "l", "h", "j", "#")


class PhonemeVocab:
    """Deterministic many-to-one grapheme-to-phone map; spaces are dropped."""

    family = "phoneme"

    def __init__(self):
        self.units = PHONES
        self._index = {u: i for i, u in enumerate(self.units)}

    def __len__(self) -> int:
        return len(self.units)

    @property
    def hash(self) -> str:
        return vocab_hash(self.family, self.units)

    def encode(self, text: str) -> list[int]:
        check_inventory(text, GRAPHEMES + SPACE)
        # digits and symbols share the catch-all phone
        return [self._index[_PHONE_OF.get(ch, "#")] for ch in text if ch != SPACE]

    def decode(self, ids: Sequence[int]) -> str:
        return "".join(self.units[i] for i in ids)


class SoundClassVocab:
    """Phoneme-family units for synthetic tasks: one unit per acoustic class.

    ``classes`` maps each non-space character to its class index; spaces are
    dropped as in :class:`PhonemeVocab`.
    """

    family = "phoneme"

    def __init__(self, classes: dict[str, int]):
        n = max(classes.values()) + 1
        self.classes = dict(classes)
        self.units = tuple(f"s{i}" for i in range(n))

    def __len__(self) -> int:
        return len(self.units)

    @property
    def hash(self) -> str:
        return vocab_hash(self.family, self.units)

    def encode(self, text: str) -> list[int]:
        check_inventory(text, "".join(self.classes) + SPACE)
        return [self.classes[ch] for ch in text if ch != SPACE]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.units[i] for i in ids)


def save_vocab(vocab, path: str | Path, extra_header: str = "") -> None:
    """One unit per line (line order = label index) after a ``#`` header line."""
    header = f"# family={vocab.family} size={len(vocab)} hash={vocab.hash}"
    if vocab.family == "grapheme":
        header += f" space={int(SPACE in vocab.units)}"
    if extra_header:
        header += " " + extra_header
    lines = [header] + [SPACE_TOKEN if u == SPACE else u for u in vocab.units]
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_vocab_file(path: str | Path) -> tuple[dict[str, str], list[str]]:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if not lines or not lines[0].startswith("#"):
        raise VocabularyError(f"{path}: missing vocab header line")
    header = dict(item.split("=", 1) for item in lines[0][1:].split() if "=" in item)
    units = [SPACE if ln == SPACE_TOKEN else ln for ln in lines[1:] if ln != ""]
    if "size" in header and int(header["size"]) != len(units):
        raise VocabularyError(f"{path}: header says {header['size']} units, found {len(units)}")
    return header, units


def vocab_from_units(family: str, units: Sequence[str], counts_hash: str = ""):
    """Rebuild a vocabulary object from its family and ordered unit list."""
    units = list(units)
    if family == "grapheme":
        vocab = GraphemeVocab("".join(u for u in units if u != SPACE), with_space=SPACE in units)
        if list(vocab.units) != units:
            raise VocabularyError("space must be the last grapheme unit")
        return vocab
    if family == "wordpiece":
        from .wordpiece import WordpieceVocab

        graphemes = "".join(u for u in units if len(u) == 1 and u != SPACE)
        return WordpieceVocab(units, counts_hash=counts_hash, graphemes=graphemes)
    if family == "phoneme":
        return PhonemeVocab()
    raise VocabularyError(f"unknown unit family {family!r}")


def load_vocab(path: str | Path):
    header, units = read_vocab_file(path)
    try:
        vocab = vocab_from_units(header.get("family", "grapheme"), units, header.get("counts_sha256", ""))
    except VocabularyError as exc:
        raise VocabularyError(f"{path}: {exc}") from None
    if "hash" in header and header["hash"] != vocab.hash:
        raise VocabularyError(f"{path}: vocab hash mismatch")
    return vocab
