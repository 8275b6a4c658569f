"""Binary checkpoint format and name-based partial parameter transfer.

File layout (all integers little-endian)::

    magic        8 bytes   b"RNNTCKPT"
    version      uint32    FORMAT_VERSION
    meta_len     uint32    length of the metadata block
    metadata     meta_len  UTF-8 JSON, keys sorted, no whitespace
    count        uint32    number of tensors
    directory    count x { name_len uint16, name UTF-8, dtype uint8 (1 = float32),
                           ndim uint8, dims uint32[ndim],
                           offset uint64 (from payload start), nbytes uint64 }
    payload      raw little-endian float32 tensor data in directory order
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ShapeError, VocabularyError

MAGIC = b"RNNTCKPT"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1

# softmax heads of pre-training graphs never leave their checkpoint
DEFAULT_DISCARD = ("lm/softmax/*", "ctc/*")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = {k: np.ascontiguousarray(v, dtype="<f4") for k, v in self.tensors.items()}
        for name, value in self.tensors.items():
            if any(d <= 0 for d in value.shape):
                raise ShapeError(f"tensor {name} has a non-positive dimension {value.shape}")

    @classmethod
    def from_params(cls, params: dict, **metadata) -> "Checkpoint":
        return cls(dict(params), metadata)

    def to_params(self) -> dict:
        return {k: v.astype(np.float64) for k, v in self.tensors.items()}

    def to_bytes(self) -> bytes:
        meta = json.dumps(self.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
        head = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(self.tensors))]
        payload = []
        offset = 0
        for name, value in self.tensors.items():
            raw = value.tobytes()
            encoded = name.encode("utf-8")
            head.append(struct.pack("<H", len(encoded)) + encoded)
            head.append(struct.pack(f"<BB{value.ndim}I", DTYPE_FLOAT32, value.ndim, *value.shape))
            head.append(struct.pack("<QQ", offset, len(raw)))
            payload.append(raw)
            offset += len(raw)
        return b"".join(head + payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if data[:8] != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version, meta_len = struct.unpack_from("<II", data, 8)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        pos = 16
        metadata = json.loads(data[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            dtype, ndim = struct.unpack_from("<BB", data, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            offset, nbytes = struct.unpack_from("<QQ", data, pos)
            pos += 16
            if dtype != DTYPE_FLOAT32:
                raise ValueError(f"tensor {name}: unsupported dtype code {dtype}")
            entries.append((name, shape, offset, nbytes))
        tensors = {}
        for name, shape, offset, nbytes in entries:
            start = pos + offset
            tensors[name] = np.frombuffer(data[start : start + nbytes], dtype="<f4").reshape(shape).copy()
        if len(tensors) != count:
            raise ValueError("duplicate tensor names in checkpoint")
        return cls(tensors, metadata)

    def save(self, path: str | Path) -> str:
        """Atomically write the checkpoint; returns its sha256."""
        data = self.to_bytes()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


@dataclass
class TransferReport:
    initialized: list[str] = field(default_factory=list)  # model tensors copied from the checkpoint
    skipped: list[str] = field(default_factory=list)  # model tensors left at fresh init
    discarded: list[str] = field(default_factory=list)  # checkpoint tensors barred from transfer
    unused: list[str] = field(default_factory=list)  # other checkpoint tensors nobody asked for

    def status(self, name: str) -> str:
        return "transferred" if name in self.initialized else "fresh"


def _discarded(name: str, patterns) -> bool:
    return any(fnmatch.fnmatchcase(name, p) for p in patterns)


def identity_map(checkpoint: Checkpoint, params: dict, prefixes=("encoder/", "decoder/")) -> dict[str, str]:
    """Map every model tensor to the same-named checkpoint tensor under ``prefixes``."""
    return {n: n for n in params if n in checkpoint.tensors and n.startswith(tuple(prefixes))}


def load_partial(
    checkpoint: Checkpoint,
    params: dict,
    name_map: dict[str, str],
    *,
    vocab_hash: str | None = None,
    vocab_dependent=(),
    discard=DEFAULT_DISCARD,
) -> TransferReport:
    """Copy mapped checkpoint tensors into ``params`` (in place).

    ``name_map`` maps model tensor names to checkpoint tensor names.
    Checkpoint tensors matching a ``discard`` pattern are never copied.
    Tensors in ``vocab_dependent`` (embedding rows indexed by unit) transfer
    only when the checkpoint's ``vocab_hash`` metadata equals ``vocab_hash``.
    """
    report = TransferReport()
    # validate everything before touching params
    plan = []
    for target, source in name_map.items():
        if target not in params:
            raise KeyError(f"model has no tensor {target!r}")
        if source not in checkpoint.tensors:
            raise KeyError(f"checkpoint has no tensor {source!r}")
        if _discarded(source, discard):
            continue
        src = checkpoint.tensors[source]
        if src.shape != params[target].shape:
            raise ShapeError(
                f"cannot load {source} {tuple(src.shape)} into {target} {tuple(params[target].shape)}"
            )
        if target in vocab_dependent and checkpoint.metadata.get("vocab_hash") != vocab_hash:
            raise VocabularyError(
                f"{target}: checkpoint vocab {checkpoint.metadata.get('vocab_hash')} != model vocab {vocab_hash}"
            )
        plan.append((target, src))
    for target, src in plan:
        params[target] = src.astype(np.float64)
        report.initialized.append(target)
    copied = set(report.initialized)
    report.skipped = [n for n in params if n not in copied]
    used = {name_map[t] for t in copied}
    for name in checkpoint.tensors:
        if _discarded(name, discard):
            report.discarded.append(name)
        elif name not in used:
            report.unused.append(name)
    return report
