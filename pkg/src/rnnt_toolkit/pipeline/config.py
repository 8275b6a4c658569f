"""Training configuration, read from YAML.

Example (every key except ``seed`` and ``stage`` has a default)::

    seed: 0
    stage: rnnt                # ctc | lm | rnnt
    units:
      family: grapheme         # grapheme | wordpiece
      vocab: null              # vocab file; null = the task's grapheme vocab
    model:
      encoder: {depth: 2, width: 64, time_conv_after: null, time_conv_factor: 3}
      decoder: {depth: 2, width: 64, embed_dim: null}
      joint_dim: 64
    ctc:
      taps:                    # hierarchical CTC; depth counts LSTM layers from 1
        - {depth: 2, family: grapheme, weight: 1.0}
    optimizer: {learning_rate: 0.05, clip_norm: 5.0, momentum: 0.0, batch_size: 8, steps: 1000,
                final_learning_rate: null}  # null = constant rate, else linear decay to it
    transfer: {encoder: null, decoder: null}   # ctc / lm checkpoints for the rnnt stage
    stack_frames: 1
    eval_every: 0              # dev label error (greedy) every N steps; 0 = never
    checkpoint_every: 0        # extra checkpoints every N steps; 0 = final only

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

STAGES = ("ctc", "lm", "rnnt")


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    return cls(**data)


@dataclass(frozen=True)
class EncoderSection:
    depth: int = 2
    width: int = 64
    time_conv_after: int | None = None
    time_conv_factor: int = 3


@dataclass(frozen=True)
class DecoderSection:
    depth: int = 2
    width: int = 64
    embed_dim: int | None = None


@dataclass(frozen=True)
class ModelSection:
    encoder: EncoderSection = field(default_factory=EncoderSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    joint_dim: int = 64


@dataclass(frozen=True)
class TapSection:
    depth: int
    family: str = "grapheme"
    weight: float = 1.0
    vocab: str | None = None  # needed for wordpiece taps when the output units are not wordpieces


@dataclass(frozen=True)
class UnitsSection:
    family: str = "grapheme"
    vocab: str | None = None

    def __post_init__(self):
        if self.family not in ("grapheme", "wordpiece"):
            raise ValueError(f"units.family must be grapheme or wordpiece, got {self.family!r}")
        if self.family == "wordpiece" and not self.vocab:
            raise ValueError("wordpiece units need units.vocab")


@dataclass(frozen=True)
class OptimizerSection:
    learning_rate: float = 0.05
    clip_norm: float | None = 5.0
    momentum: float = 0.0
    batch_size: int = 8
    steps: int = 1000
    final_learning_rate: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("optimizer.batch_size must be >= 1 and optimizer.steps >= 0")
        if self.learning_rate < 0 or (self.final_learning_rate is not None and self.final_learning_rate < 0):
            raise ValueError("learning rates must be non-negative")


@dataclass(frozen=True)
class TransferSection:
    encoder: str | None = None
    decoder: str | None = None


@dataclass(frozen=True)
class TrainingConfig:
    seed: int
    stage: str
    units: UnitsSection = field(default_factory=UnitsSection)
    model: ModelSection = field(default_factory=ModelSection)
    taps: tuple[TapSection, ...] = ()
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    transfer: TransferSection = field(default_factory=TransferSection)
    stack_frames: int = 1
    eval_every: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ValueError("seed is mandatory and must be an integer")
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.stage == "ctc" and not self.taps:
            raise ValueError("the ctc stage needs at least one tap under ctc.taps")
        if self.stage != "rnnt" and (self.transfer.encoder or self.transfer.decoder):
            raise ValueError("transfer sources apply to the rnnt stage only")
        if self.stack_frames < 1:
            raise ValueError("stack_frames must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        data = dict(data)
        for key in ("seed", "stage"):
            if key not in data:
                raise ValueError(f"config is missing the mandatory key {key!r}")
        model = data.pop("model", None) or {}
        unknown = sorted(set(model) - {"encoder", "decoder", "joint_dim"})
        if unknown:
            raise ValueError(f"model: unknown keys {unknown}")
        model_section = ModelSection(
            encoder=_build(EncoderSection, model.get("encoder"), "model.encoder"),
            decoder=_build(DecoderSection, model.get("decoder"), "model.decoder"),
            joint_dim=model.get("joint_dim", 64),
        )
        ctc = data.pop("ctc", None) or {}
        taps = tuple(_build(TapSection, t, "ctc.taps") for t in ctc.get("taps", []))
        known = {f.name for f in fields(cls)} - {"taps"}
        unknown = sorted(set(data) - known - {"units", "optimizer", "transfer"})
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        return cls(
            seed=data.pop("seed"),
            stage=data.pop("stage"),
            units=_build(UnitsSection, data.pop("units", None), "units"),
            model=model_section,
            taps=taps,
            optimizer=_build(OptimizerSection, data.pop("optimizer", None), "optimizer"),
            transfer=_build(TransferSection, data.pop("transfer", None), "transfer"),
            **data,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrainingConfig":
        path = Path(path)
        cfg = cls.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")) or {})
        return cfg.resolve_paths(path.parent)

    def resolve_paths(self, base: str | Path) -> "TrainingConfig":
        base = Path(base)

        def fix(p):
            return None if p is None else str(base / p)

        return replace(
            self,
            units=replace(self.units, vocab=fix(self.units.vocab)),
            taps=tuple(replace(t, vocab=fix(t.vocab)) for t in self.taps),
            transfer=TransferSection(fix(self.transfer.encoder), fix(self.transfer.decoder)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctc"] = {"taps": [dict(t) for t in d.pop("taps")]}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
