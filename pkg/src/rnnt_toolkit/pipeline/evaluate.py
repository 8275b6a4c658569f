"""Decode a dataset split and score it."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from ..decode import BoundTransducer, DecodeConfig, beam_search, edit_alignment, greedy_stream_decode, word_error_rate
from ..nnet import Checkpoint
from .data import Utterance, atomic_write_text
from .train import features, load_model


@dataclass
class EvalReport:
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int
    label_error_rate: float  # edit distance over output units / reference units
    label_errors: int
    ref_labels: int
    utterances: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        return (
            f"WER {100 * self.wer:.2f}% (S={self.substitutions} I={self.insertions} D={self.deletions} "
            f"N={self.ref_words}) label error {100 * self.label_error_rate:.2f}% over {self.ref_labels} units"
        )


def decode_utterance(bound: BoundTransducer, xs, config: DecodeConfig | None, greedy: bool):
    if greedy:
        return greedy_stream_decode(bound, xs, (config or DecodeConfig()).max_symbols_per_frame), None
    best = beam_search(bound, xs, config)[0]
    return list(best.labels), best.score


def score(model, params, vocab, utts: Sequence[Utterance], stack: int = 1, config: DecodeConfig | None = None, greedy: bool = False) -> EvalReport:
    """Decode every utterance and aggregate word and label errors over the split."""
    bound = BoundTransducer(model, params)
    config = config or DecodeConfig.for_units(vocab.family)
    s = i = d = n_words = label_errors = n_labels = 0
    rows = []
    for u in utts:
        hyp_ids, best = decode_utterance(bound, features(u, stack), config, greedy)
        ref_ids = vocab.encode(u.transcript)
        hyp = vocab.decode(hyp_ids)
        w = word_error_rate(u.transcript, hyp)
        s, i, d, n_words = s + w.substitutions, i + w.insertions, d + w.deletions, n_words + w.ref_length
        label_errors += sum(edit_alignment(ref_ids, hyp_ids))
        n_labels += len(ref_ids)
        rows.append({"uid": u.uid, "reference": u.transcript, "hypothesis": hyp, "score": best})
    return EvalReport(
        wer=(s + i + d) / max(1, n_words),
        substitutions=s,
        insertions=i,
        deletions=d,
        ref_words=n_words,
        label_error_rate=label_errors / max(1, n_labels),
        label_errors=label_errors,
        ref_labels=n_labels,
        utterances=rows,
    )


def greedy_label_error(model, params, vocab, utts: Sequence[Utterance], stack: int = 1) -> float:
    return score(model, params, vocab, utts, stack, greedy=True).label_error_rate


def evaluate(checkpoint: Checkpoint | str | Path, utts: Sequence[Utterance], config: DecodeConfig | None = None, greedy: bool = False, out: str | Path | None = None) -> EvalReport:
    """Score an RNN-T checkpoint on ``utts`` with the decode defaults for its unit family."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = Checkpoint.load(checkpoint)
    if checkpoint.metadata.get("stage") != "rnnt":
        raise ValueError("evaluate needs an rnnt checkpoint")
    model, params, vocab, stack = load_model(checkpoint)
    report = score(model, params, vocab, utts, stack, config, greedy)
    if out is not None:
        atomic_write_text(out, report.to_json())
    return report
