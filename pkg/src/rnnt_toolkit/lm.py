"""Language-model pre-training of the prediction network, and word perplexity.

The LM reads the same start symbol and label inputs as the RNN-T prediction
network and predicts the next label, with an extra end-of-sentence class at
index ``V``. Only the LSTM (and embedding) tensors survive transfer; the
softmax head is discarded.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import VocabularyError
from .nnet.models import LmModel
from .optim import Sgd

WORDPIECE_EMBED_DIM = 500  # label embedding size for wordpiece prediction networks


def default_embed_dim(family: str) -> int | None:
    """Input embedding size for a unit family: wordpieces are embedded, graphemes stay one-hot."""
    return WORDPIECE_EMBED_DIM if family == "wordpiece" else None


def check_labels(batch: Sequence[Sequence[int]], num_labels: int) -> None:
    for i, labels in enumerate(batch):
        for j, k in enumerate(labels):
            if not 0 <= int(k) < num_labels:
                raise VocabularyError(f"sequence {i} position {j}: label {k} outside [0, {num_labels})")


def lm_loss_and_grad(model: LmModel, params: dict, batch: Sequence[Sequence[int]]):
    """Mean next-label cross-entropy over every position in the batch, and its gradient.

    Each sequence contributes ``len + 1`` positions: its labels after the
    start symbol, then end-of-sentence.
    """
    if not batch:
        raise ValueError("empty batch")
    check_labels(batch, model.num_labels)
    nll, n, grads = model.batch_nll_and_grad(params, batch)
    return nll / n, {k: g / n for k, g in grads.items()}


def lm_train_step(model: LmModel, params: dict, batch: Sequence[Sequence[int]], optimizer: Sgd) -> float:
    """One SGD update in place; returns the batch loss before the update."""
    loss, grads = lm_loss_and_grad(model, params, batch)
    optimizer.step(params, grads)
    return loss


def encode_corpus(sentences: Iterable[str], vocab) -> tuple[list[list[int]], int]:
    """Label sequences for ``sentences`` and their total word count."""
    seqs, words = [], 0
    for s in sentences:
        seqs.append(vocab.encode(s))
        words += len(s.split())
    return seqs, words


def read_corpus(path: str | Path) -> list[str]:
    """One sentence per line; blank lines are skipped."""
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def total_nll(model: LmModel, params: dict, seqs: Sequence[Sequence[int]]) -> float:
    """Summed label NLL of ``seqs``, end-of-sentence events included."""
    check_labels(seqs, model.num_labels)
    total = 0.0
    for labels in seqs:
        lp = model.log_probs(params, labels)
        targets = np.append(np.asarray(labels, dtype=np.int64), model.eos)
        total -= math.fsum(lp[np.arange(len(targets)), targets])
    return total


def word_perplexity(model: LmModel, params: dict, sentences: Sequence[str], vocab) -> float:
    """``exp(total label NLL / total words)``, comparable across unit families."""
    seqs, words = encode_corpus(sentences, vocab)
    if words == 0:
        raise ValueError("cannot compute perplexity of an empty corpus")
    return math.exp(total_nll(model, params, seqs) / words)
