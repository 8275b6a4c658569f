"""Utterance containers and on-disk formats.

Feature files (``*.feats``) are little-endian binary::

    b"RNNTFEAT"  uint32 version (=1)  uint32 n_utterances
    per utterance:
        uint32 id_length  id (UTF-8)  uint32 n_frames  uint32 dim
        n_frames * dim float32 values, frame-major

A CSV rendering (``utt_id,frame,f0,f1,...``) exists for debugging.
Transcripts are UTF-8 TSV, ``utt_id<TAB>transcript`` per line.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATS_MAGIC = b"RNNTFEAT"
FEATS_VERSION = 1


@dataclass
class Utterance:
    uid: str
    features: np.ndarray  # (frames, dim) float32
    transcript: str


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_features(path: str | Path, utts: Sequence[Utterance]) -> None:
    parts = [FEATS_MAGIC, struct.pack("<II", FEATS_VERSION, len(utts))]
    for u in utts:
        uid = u.uid.encode("utf-8")
        feats = np.ascontiguousarray(u.features, dtype="<f4")
        if feats.ndim != 2:
            raise ValueError(f"{u.uid}: features must be 2-D, got shape {feats.shape}")
        parts += [struct.pack("<I", len(uid)), uid, struct.pack("<II", *feats.shape), feats.tobytes()]
    atomic_write_bytes(path, b"".join(parts))


def read_features(path: str | Path) -> list[tuple[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != FEATS_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    version, n = struct.unpack_from("<II", data, 8)
    if version != FEATS_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    off = 16
    out = []
    for _ in range(n):
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        uid = data[off : off + id_len].decode("utf-8")
        off += id_len
        frames, dim = struct.unpack_from("<II", data, off)
        off += 8
        size = 4 * frames * dim
        feats = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=off).reshape(frames, dim).copy()
        off += size
        out.append((uid, feats))
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return out


def write_features_csv(path: str | Path, utts: Sequence[Utterance]) -> None:
    dim = utts[0].features.shape[1] if utts else 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["utt_id", "frame"] + [f"f{i}" for i in range(dim)])
        for u in utts:
            for t, row in enumerate(u.features):
                w.writerow([u.uid, t] + [repr(float(v)) for v in row])


def read_features_csv(path: str | Path) -> list[tuple[str, np.ndarray]]:
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        next(reader)
        for rec in reader:
            rows.setdefault(rec[0], []).append([float(v) for v in rec[2:]])
    return [(uid, np.asarray(r, dtype=np.float32)) for uid, r in rows.items()]


def write_transcripts(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    atomic_write_text(path, "".join(f"{uid}\t{text}\n" for uid, text in pairs))


def read_transcripts(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        if not line:
            continue
        uid, sep, text = line.partition("\t")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'utt_id<TAB>transcript'")
        out[uid] = text
    return out


def stack_frames(xs: np.ndarray, n: int = 3) -> np.ndarray:
    """Concatenate each frame with its ``n - 1`` successors (zero-padded at the end).

    The frame rate is unchanged; only the feature dimension grows by ``n``.
    """
    if n == 1:
        return xs
    T, D = xs.shape
    padded = np.concatenate([xs, np.zeros((n - 1, D), dtype=xs.dtype)])
    return np.concatenate([padded[i : i + T] for i in range(n)], axis=1)
