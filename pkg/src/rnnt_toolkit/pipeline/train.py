"""The three training stages: CTC encoder pre-training, LM decoder pre-training, RNN-T.

Every stage appends one row per step to ``metrics.csv`` in the run directory
(no wall-clock fields, so reruns are byte-identical), saves
``<stage>.ckpt`` and records config hash, seed and checkpoint hashes in
``manifest.json``. The ``rnnt`` stage copies encoder tensors from a CTC
checkpoint and prediction-network tensors from an LM checkpoint before its
first step; output heads of both sources are discarded.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..ctc import Tap, min_frames
from ..errors import ShapeError, VocabularyError
from ..lm import lm_loss_and_grad
from ..nnet import Checkpoint, CtcModel, DecoderConfig, EncoderConfig, LmModel, RnntModel, identity_map, load_partial
from ..optim import Sgd, linear_decay
from ..units import load_vocab, vocab_from_units
from .config import TrainingConfig
from .data import Utterance, atomic_write_text, stack_frames
from .synthetic import Dataset

log = logging.getLogger(__name__)

RUN_DIR_ENV = "RNNT_RUN_DIR"
METRICS_HEADER = "stage,step,loss,grad_norm,dev_label_error\n"


def default_run_dir() -> Path:
    return Path(os.environ.get(RUN_DIR_ENV, "runs"))


# -- vocabularies and models ----------------------------------------------------


def output_vocab(config: TrainingConfig, dataset: Dataset):
    if config.units.vocab:
        vocab = load_vocab(config.units.vocab)
        if vocab.family != config.units.family:
            raise VocabularyError(f"{config.units.vocab} holds {vocab.family} units, config asks for {config.units.family}")
        return vocab
    return dataset.vocab


def tap_vocab(tap, config: TrainingConfig, dataset: Dataset):
    if tap.family == "phoneme":
        return dataset.spec.phoneme_vocab
    if tap.vocab:
        return load_vocab(tap.vocab)
    if tap.family == "grapheme":
        return dataset.vocab
    if config.units.family == "wordpiece":
        return output_vocab(config, dataset)
    raise ValueError(f"tap at depth {tap.depth}: wordpiece taps need a vocab file")


def encoder_config(config: TrainingConfig, input_dim: int) -> EncoderConfig:
    return EncoderConfig(input_dim=input_dim, **asdict(config.model.encoder))


def decoder_config(config: TrainingConfig, num_labels: int) -> DecoderConfig:
    return DecoderConfig(num_labels=num_labels, **asdict(config.model.decoder))


def features(utt: Utterance, stack: int) -> np.ndarray:
    return stack_frames(np.asarray(utt.features, dtype=np.float64), stack)


def vocab_metadata(vocab) -> dict:
    return {"vocab_hash": vocab.hash, "vocab": {"family": vocab.family, "units": list(vocab.units)}}


def load_model(checkpoint: Checkpoint):
    """``(model, params, vocab, stack_frames)`` from a checkpoint written by :func:`run_stage`."""
    from ..nnet import build_model

    meta = checkpoint.metadata
    model = build_model(meta["model"])
    vocab = vocab_from_units(meta["vocab"]["family"], meta["vocab"]["units"])
    return model, checkpoint.to_params(), vocab, int(meta.get("stack_frames", 1))


# -- transfer --------------------------------------------------------------------


def apply_transfers(config: TrainingConfig, model: RnntModel, params: dict, vocab) -> dict[str, str] | None:
    """Partially initialize ``params`` from the configured sources; returns per-tensor status."""
    src = config.transfer
    if not (src.encoder or src.decoder):
        return None
    initialized: set[str] = set()
    if src.encoder:
        ck = Checkpoint.load(src.encoder)
        if ck.metadata.get("stage") != "ctc":
            raise ValueError(f"{src.encoder}: encoder source must be a ctc checkpoint")
        theirs = ck.metadata["model"]["encoder"]
        if theirs != asdict(model.encoder.cfg):
            raise ShapeError(f"encoder topology mismatch: source {theirs}, model {asdict(model.encoder.cfg)}")
        report = load_partial(ck, params, identity_map(ck, params, ("encoder/",)))
        initialized.update(report.initialized)
    if src.decoder:
        ck = Checkpoint.load(src.decoder)
        if ck.metadata.get("stage") != "lm":
            raise ValueError(f"{src.decoder}: decoder source must be an lm checkpoint")
        if ck.metadata.get("vocab_hash") != vocab.hash:
            raise VocabularyError(f"{src.decoder}: LM vocab {ck.metadata.get('vocab_hash')} != model vocab {vocab.hash}")
        theirs = ck.metadata["model"]["decoder"]
        if theirs != asdict(model.decoder.cfg):
            raise ShapeError(f"decoder topology mismatch: source {theirs}, model {asdict(model.decoder.cfg)}")
        report = load_partial(
            ck,
            params,
            identity_map(ck, params, ("decoder/",)),
            vocab_hash=vocab.hash,
            vocab_dependent=model.decoder.vocab_dependent,
        )
        initialized.update(report.initialized)
    return {name: "transferred" if name in initialized else "fresh" for name in params}


# -- stage data -----------------------------------------------------------------


@dataclass
class StageData:
    items: list
    loss_fn: object  # (params, batch) -> (mean loss, grads)
    skipped: int = 0


def _ctc_stage(config, dataset, input_dim):
    taps = [Tap(t.depth, t.family, t.weight) for t in config.taps]
    vocabs = [tap_vocab(t, config, dataset) for t in config.taps]
    model = CtcModel(encoder_config(config, input_dim), list(zip(taps, (len(v) for v in vocabs))))
    items, skipped = [], 0
    for u in dataset.train:
        xs = features(u, config.stack_frames)
        targets = [v.encode(u.transcript) for v in vocabs]
        if any(min_frames(tg) > model.encoder.cfg.tap_length(t.depth, len(xs)) for t, tg in zip(taps, targets)):
            skipped += 1  # a tap cannot align this utterance at all
            continue
        items.append((xs, targets))

    def loss_fn(params, batch):
        total, grads, _ = model.batch_loss_and_grad(params, batch)
        return total / len(batch), {k: g / len(batch) for k, g in grads.items()}

    return model, StageData(items, loss_fn, skipped), vocabs[-1]


def _lm_stage(config, dataset, vocab):
    model = LmModel(decoder_config(config, len(vocab)))
    items = [vocab.encode(s) for s in dataset.lm_corpus()]

    def loss_fn(params, batch):
        return lm_loss_and_grad(model, params, batch)

    return model, StageData(items, loss_fn)


def _rnnt_stage(config, dataset, vocab, input_dim):
    model = RnntModel(encoder_config(config, input_dim), decoder_config(config, len(vocab)), config.model.joint_dim)
    items = [(features(u, config.stack_frames), vocab.encode(u.transcript)) for u in dataset.train]

    def loss_fn(params, batch):
        total, grads = model.batch_loss_and_grad(params, batch)
        return total / len(batch), {k: g / len(batch) for k, g in grads.items()}

    return model, StageData(items, loss_fn)


# -- bookkeeping ------------------------------------------------------------------


def update_manifest(run_dir: Path, key: str, entry: dict) -> None:
    path = run_dir / "manifest.json"
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest[key] = entry
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


class MetricsLog:
    """Append-only CSV; floats are written with ``repr`` so equal runs give equal bytes."""

    def __init__(self, path: Path):
        self.path = path
        if not path.exists() or path.stat().st_size == 0:
            with open(path, "a", encoding="utf-8") as f:
                f.write(METRICS_HEADER)

    def append(self, stage: str, step: int, loss: float, grad_norm: float, dev_label_error: float | None = None):
        dev = "" if dev_label_error is None else repr(float(dev_label_error))
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(f"{stage},{step},{float(loss)!r},{float(grad_norm)!r},{dev}\n")


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; each epoch is a fresh permutation (remainder dropped)."""
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield order[i : i + batch_size]


@dataclass
class StageResult:
    stage: str
    model: object
    params: dict
    vocab: object
    checkpoint_path: Path
    checkpoint_sha256: str
    losses: list[float] = field(default_factory=list)
    transfer: dict[str, str] | None = None


@dataclass
class TextCorpus:
    """Text-only training data for the ``lm`` stage."""

    sentences: list[str]
    vocab: object
    spec: object = None

    def lm_corpus(self) -> list[str]:
        return list(self.sentences)


def run_stage(
    config: TrainingConfig,
    dataset: Dataset | TextCorpus,
    run_dir: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
) -> StageResult:
    """Train one stage; ``run_dir`` defaults to ``$RNNT_RUN_DIR`` (else ``./runs``)."""
    run_dir = Path(run_dir) if run_dir is not None else default_run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    stage = config.stage
    vocab = output_vocab(config, dataset)
    if stage == "lm":
        model, data = _lm_stage(config, dataset, vocab)
    elif isinstance(dataset, TextCorpus):
        raise ValueError(f"the {stage} stage needs an acoustic dataset")
    elif stage == "ctc":
        model, data, vocab = _ctc_stage(config, dataset, dataset.spec.dim * config.stack_frames)
        if data.skipped:
            log.warning("ctc: skipped %d utterances too short for their targets", data.skipped)
    else:
        model, data = _rnnt_stage(config, dataset, vocab, dataset.spec.dim * config.stack_frames)
    if not data.items:
        raise ValueError(f"{stage}: no training items")

    rng = np.random.default_rng(config.seed)
    params = model.init(rng)
    transfer = apply_transfers(config, model, params, vocab) if stage == "rnnt" else None
    if transfer is not None:
        atomic_write_text(run_dir / "transfer.json", json.dumps(transfer, indent=2) + "\n")

    oc = config.optimizer
    opt = Sgd(oc.learning_rate, oc.clip_norm, oc.momentum)
    metrics = MetricsLog(run_dir / "metrics.csv")
    meta = {
        "stage": stage,
        "model": model.config(),
        "seed": config.seed,
        "config_hash": config.hash(),
        "stack_frames": config.stack_frames,
        **vocab_metadata(vocab),
    }
    checkpoints = {}
    order = batches(len(data.items), min(config.optimizer.batch_size, len(data.items)), np.random.default_rng([config.seed, 1]))
    losses = []
    for step in range(config.optimizer.steps):
        batch = [data.items[i] for i in next(order)]
        loss, grads = data.loss_fn(params, batch)
        opt.learning_rate = linear_decay(oc.learning_rate, oc.final_learning_rate, oc.steps, step)
        norm = opt.step(params, grads)
        losses.append(loss)
        dev = None
        if stage == "rnnt" and config.eval_every and (step + 1) % config.eval_every == 0:
            from .evaluate import greedy_label_error

            dev = greedy_label_error(model, params, vocab, dataset.dev, config.stack_frames)
        metrics.append(stage, step, loss, norm, dev)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            path = run_dir / f"{stage}-step{step + 1}.ckpt"
            checkpoints[path.name] = Checkpoint.from_params(params, step=step + 1, **meta).save(path)
    path = Path(checkpoint_path) if checkpoint_path is not None else run_dir / f"{stage}.ckpt"
    digest = Checkpoint.from_params(params, step=config.optimizer.steps, **meta).save(path)
    checkpoints[path.name] = digest
    update_manifest(
        run_dir,
        stage,
        {
            "config_hash": config.hash(),
            "seed": config.seed,
            "config": config.to_dict(),
            "task": asdict(dataset.spec) if dataset.spec is not None else None,
            "checkpoints": checkpoints,
        },
    )
    return StageResult(stage, model, params, vocab, path, digest, losses, transfer)

