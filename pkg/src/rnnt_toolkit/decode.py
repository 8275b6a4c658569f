"""Streaming greedy decoding, modified RNN-T beam search and WER scoring.

Decoders talk to a *transducer*: any object with

* ``encode(frames) -> (T, E)`` encoder outputs,
* ``blank`` (the blank index, equal to the number of labels),
* ``predict(label, state) -> (h_dec, state)`` where ``label=None`` means the
  start symbol and ``state=None`` the initial state,
* ``log_probs(h_enc_t, h_dec, temperature) -> (V + 1,)`` log-probabilities.

:class:`BoundTransducer` adapts a trained :class:`~rnnt_toolkit.nnet.RnntModel`.
"""

from __future__ import annotations

import bisect
import heapq
from dataclasses import dataclass
from typing import Any, Iterator, NamedTuple, Sequence

import numpy as np

from .lattice import NEG_INF


class BoundTransducer:
    """An :class:`RnntModel` together with its parameters."""

    def __init__(self, model, params):
        self.model = model
        self.params = params
        self.blank = model.num_labels

    def encode(self, frames: np.ndarray) -> np.ndarray:
        return self.model.encode(self.params, frames)

    def predict(self, label, state):
        return self.model.decoder.step(self.params, label, state)

    def log_probs(self, h_enc_t, h_dec, temperature: float = 1.0) -> np.ndarray:
        return self.model.log_probs(self.params, h_enc_t, h_dec, temperature)


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 100
    temperature: float = 1.5
    max_symbols_per_frame: int = 10
    max_output_length: int | None = None  # None = unbounded
    nbest: int = 1

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be a positive integer")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be a positive integer")

    @classmethod
    def for_units(cls, family: str, **overrides) -> "DecodeConfig":
        """Paper defaults: beam 100 for graphemes, 25 for wordpieces, temperature 1.5."""
        beam = 25 if family == "wordpiece" else 100
        return cls(**{"beam": beam, "temperature": 1.5, **overrides})


@dataclass
class Hypothesis:
    labels: tuple[int, ...]
    score: float
    state: Any = None  # (h_dec, recurrent state) after consuming ``labels``


class StreamEvent(NamedTuple):
    frame: int
    label: int | None  # None = blank, i.e. advance to the next frame
    forced: bool = False  # blank forced by the per-frame symbol cap


def stream_greedy(model, frames: np.ndarray, max_symbols_per_frame: int = 10) -> Iterator[StreamEvent]:
    """Yield emissions as they happen: a label, or a blank moving to the next frame.

    Ties in the argmax go to the lowest index, so a label tied with blank wins.
    The stream ends with the blank emitted at the last frame.
    """
    h_enc = model.encode(frames)
    h_dec, state = model.predict(None, None)
    for t in range(len(h_enc)):
        emitted = 0
        while True:
            if emitted >= max_symbols_per_frame:
                yield StreamEvent(t, None, True)
                break
            k = int(np.argmax(model.log_probs(h_enc[t], h_dec, 1.0)))
            if k == model.blank:
                yield StreamEvent(t, None)
                break
            yield StreamEvent(t, k)
            emitted += 1
            h_dec, state = model.predict(k, state)


def greedy_stream_decode(model, frames: np.ndarray, max_symbols_per_frame: int = 10) -> list[int]:
    return [e.label for e in stream_greedy(model, frames, max_symbols_per_frame) if e.label is not None]


class _Beam:
    """Scores keyed by label sequence, with a sorted score list for rank queries."""

    def __init__(self):
        self.scores: dict[tuple[int, ...], float] = {}
        self._sorted: list[float] = []

    def add(self, labels, score):
        old = self.scores.get(labels)
        if old is not None:
            del self._sorted[bisect.bisect_left(self._sorted, old)]
            score = float(np.logaddexp(old, score))
        self.scores[labels] = score
        bisect.insort(self._sorted, score)

    def count_above(self, score: float) -> int:
        return len(self._sorted) - bisect.bisect_right(self._sorted, score)

    def top(self, n: int) -> list[tuple[tuple[int, ...], float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def beam_search(model, frames: np.ndarray, config: DecodeConfig | None = None) -> list[Hypothesis]:
    """RNN-T beam search with prefix summation replaced by merging of identical hypotheses.

    Per frame, the most probable pending hypothesis is repeatedly expanded:
    its blank extension goes to the next-frame beam ``B`` and each label
    extension goes back into the pending set ``A``. Expansion stops once ``B``
    holds ``beam`` hypotheses more probable than anything pending, and ``B``
    is cut to ``beam``. Whenever a hypothesis reaches a set already holding
    the same label sequence the two scores are log-added. Pending mass is
    tracked as packets, so mass arriving after a hypothesis was expanded is
    expanded on its own and never counted twice.

    Returns hypotheses sorted by score (then label sequence), best first.
    """
    config = config or DecodeConfig()
    h_enc = model.encode(frames)
    V = model.blank
    cache: dict[tuple[int, ...], tuple] = {(): model.predict(None, None)}

    def dec(labels):
        if labels not in cache:
            _, state = dec(labels[:-1])
            cache[labels] = model.predict(labels[-1], state)
        return cache[labels]

    beam_hyps = {(): 0.0}
    for t in range(len(h_enc)):
        pending: dict[tuple[int, ...], list] = {}  # labels -> [score, emitted this frame]
        heap: list = []

        def push(labels, score, emitted):
            if score == NEG_INF:
                return
            entry = pending.get(labels)
            if entry is None:
                pending[labels] = [score, emitted]
            else:
                entry[0] = float(np.logaddexp(entry[0], score))
                entry[1] = min(entry[1], emitted)
            heapq.heappush(heap, (-pending[labels][0], labels))

        for labels, score in beam_hyps.items():
            push(labels, score, 0)
        nxt = _Beam()
        while heap:
            neg, labels = heapq.heappop(heap)
            entry = pending.get(labels)
            if entry is None or entry[0] != -neg:
                continue  # stale heap entry
            if nxt.count_above(entry[0]) >= config.beam:
                break
            del pending[labels]
            score, emitted = entry
            lp = model.log_probs(h_enc[t], dec(labels)[0], config.temperature)
            nxt.add(labels, score + float(lp[V]))
            if emitted < config.max_symbols_per_frame and (
                config.max_output_length is None or len(labels) < config.max_output_length
            ):
                for k in range(V):
                    push(labels + (k,), score + float(lp[k]), emitted + 1)
        beam_hyps = dict(nxt.top(config.beam))
    ranked = sorted(beam_hyps.items(), key=lambda kv: (-kv[1], kv[0]))
    return [Hypothesis(labels, score, dec(labels)) for labels, score in ranked]


# -- scoring --------------------------------------------------------------------


class WerResult(NamedTuple):
    wer: float
    substitutions: int
    insertions: int
    deletions: int
    ref_length: int
    empty_reference: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def edit_alignment(reference: Sequence, hypothesis: Sequence) -> tuple[int, int, int]:
    """(substitutions, insertions, deletions) of a minimum-edit alignment.

    Among equal-cost alignments the backtrace prefers match/substitution,
    then deletion, then insertion.
    """
    R, H = len(reference), len(hypothesis)
    d = np.zeros((R + 1, H + 1), dtype=np.int64)
    d[:, 0] = np.arange(R + 1)
    d[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]),
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
            )
    s = ins = dels = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            s += reference[i - 1] != hypothesis[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return int(s), ins, dels


def word_error_rate(reference, hypothesis) -> WerResult:
    """WER of word sequences (strings are split on whitespace).

    An empty reference with a non-empty hypothesis reports ``I / 1`` and sets
    ``empty_reference``.
    """
    ref = reference.split() if isinstance(reference, str) else list(reference)
    hyp = hypothesis.split() if isinstance(hypothesis, str) else list(hypothesis)
    s, i, d = edit_alignment(ref, hyp)
    return WerResult((s + i + d) / max(1, len(ref)), s, i, d, len(ref), len(ref) == 0 and len(hyp) > 0)
