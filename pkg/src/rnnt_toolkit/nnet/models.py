"""Encoder, prediction network and the three trainable model graphs.

Parameters live in plain ``dict[str, ndarray]`` keyed by slash paths such as
``encoder/lstm1/kernel``; gradients come back in dicts with the same keys.
The naming is shared across the CTC, LM and RNN-T graphs so that
pre-trained tensors can be transferred by name.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..ctc import HierarchicalLossSpec, Tap, combine_hierarchical, ctc_loss
from ..errors import ShapeError
from ..lattice import rnnt_loss_and_gradient
from .layers import (
    JointParams,
    LstmParams,
    dense_backward,
    dense_forward,
    init_joint,
    init_lstm,
    joint_forward,
    joint_grid_backward,
    joint_grid_forward,
    log_softmax,
    lstm_backward,
    lstm_forward,
    lstm_step,
    softmax_with_temperature,
    time_conv_backward,
    time_conv_reduce,
    uniform_init,
)

Params = dict  # str -> np.ndarray


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    depth: int = 2
    width: int = 64
    time_conv_after: int | None = None
    time_conv_factor: int = 3

    def __post_init__(self):
        if self.time_conv_after is not None and not 1 <= self.time_conv_after <= self.depth:
            raise ValueError(f"time_conv_after must lie in [1, {self.depth}]")

    def reduced_length(self, frames: int) -> int:
        if self.time_conv_after is None:
            return frames
        return -(-frames // self.time_conv_factor)

    def tap_length(self, depth: int, frames: int) -> int:
        """Frames seen by a tap reading the LSTM output at ``depth``."""
        if self.time_conv_after is not None and depth > self.time_conv_after:
            return self.reduced_length(frames)
        return frames


@dataclass(frozen=True)
class DecoderConfig:
    num_labels: int
    depth: int = 2
    width: int = 64
    embed_dim: int | None = None

    @property
    def input_dim(self) -> int:
        # row 0 is the start-of-sequence input, label k is row k + 1
        return self.embed_dim if self.embed_dim else self.num_labels + 1


class Encoder:
    def __init__(self, cfg: EncoderConfig, prefix: str = "encoder"):
        self.cfg = cfg
        self.prefix = prefix

    def init(self, rng: np.random.Generator) -> Params:
        cfg = self.cfg
        params = {}
        dim = cfg.input_dim
        for d in range(1, cfg.depth + 1):
            lstm = init_lstm(rng, dim, cfg.width)
            params[f"{self.prefix}/lstm{d}/kernel"] = lstm.kernel
            params[f"{self.prefix}/lstm{d}/bias"] = lstm.bias
            dim = cfg.width
            if d == cfg.time_conv_after:
                params[f"{self.prefix}/timeconv/kernel"] = uniform_init(rng, (cfg.time_conv_factor * dim, dim))
                params[f"{self.prefix}/timeconv/bias"] = np.zeros(dim)
        return params

    def lstm(self, params: Params, d: int) -> LstmParams:
        return LstmParams(params[f"{self.prefix}/lstm{d}/kernel"], params[f"{self.prefix}/lstm{d}/bias"])

    def forward(self, params: Params, xs: np.ndarray, lengths: Sequence[int] | None = None):
        """Returns ``(final_output, per-depth LSTM outputs, cache)``.

        For a padded batch ``xs`` of shape (T, B, D), ``lengths`` gives each
        column's true frame count; it is needed only when a time convolution
        is present, whose last window must see zeros rather than outputs
        computed on padding.
        """
        xs = np.asarray(xs, dtype=np.float64)
        mask = None
        if lengths is not None and self.cfg.time_conv_after is not None:
            mask = (np.arange(xs.shape[0])[:, None] < np.asarray(lengths)[None, :])[..., None]
        if xs.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"encoder expects feature dim {self.cfg.input_dim}, got {xs.shape[-1]}")
        h = xs
        layer_outs, caches, conv_cache = [], [], None
        for d in range(1, self.cfg.depth + 1):
            out, _, cache = lstm_forward(self.lstm(params, d), h)
            layer_outs.append(out)
            caches.append(cache)
            h = out
            if d == self.cfg.time_conv_after:
                if mask is not None:
                    h = h * mask
                h, conv_cache = time_conv_reduce(
                    h,
                    self.cfg.time_conv_factor,
                    params[f"{self.prefix}/timeconv/kernel"],
                    params[f"{self.prefix}/timeconv/bias"],
                )
        return h, layer_outs, (caches, conv_cache, mask)

    def backward(self, cache, d_final: np.ndarray | None, d_taps: dict | None = None):
        caches, conv_cache, mask = cache
        d_taps = d_taps or {}
        grads = {}
        d_h = d_final
        for d in range(self.cfg.depth, 0, -1):
            if d == self.cfg.time_conv_after:
                if d_h is not None:
                    d_h, dk, db = time_conv_backward(d_h, conv_cache)
                    if mask is not None:
                        d_h = d_h * mask
                    grads[f"{self.prefix}/timeconv/kernel"] = dk
                    grads[f"{self.prefix}/timeconv/bias"] = db
                else:
                    _, _, kernel, _ = conv_cache
                    grads[f"{self.prefix}/timeconv/kernel"] = np.zeros_like(kernel)
                    grads[f"{self.prefix}/timeconv/bias"] = np.zeros(kernel.shape[1])
            if d in d_taps:
                d_h = d_taps[d] if d_h is None else d_h + d_taps[d]
            params_d = caches[d - 1][0]
            if d_h is None:
                # nothing above this layer carries loss
                grads[f"{self.prefix}/lstm{d}/kernel"] = np.zeros_like(params_d.kernel)
                grads[f"{self.prefix}/lstm{d}/bias"] = np.zeros_like(params_d.bias)
                continue
            d_h, g, _ = lstm_backward(d_h, caches[d - 1])
            grads[f"{self.prefix}/lstm{d}/kernel"] = g.kernel
            grads[f"{self.prefix}/lstm{d}/bias"] = g.bias
        return grads, d_h


class PredictionNet:
    """LSTM stack fed with the previous non-blank label (start symbol at u=0)."""

    def __init__(self, cfg: DecoderConfig, prefix: str = "decoder"):
        self.cfg = cfg
        self.prefix = prefix

    def init(self, rng: np.random.Generator) -> Params:
        cfg = self.cfg
        params = {}
        if cfg.embed_dim:
            params[f"{self.prefix}/embedding"] = uniform_init(rng, (cfg.num_labels + 1, cfg.embed_dim))
        dim = cfg.input_dim
        for d in range(1, cfg.depth + 1):
            lstm = init_lstm(rng, dim, cfg.width)
            params[f"{self.prefix}/lstm{d}/kernel"] = lstm.kernel
            params[f"{self.prefix}/lstm{d}/bias"] = lstm.bias
            dim = cfg.width
        return params

    @property
    def vocab_dependent(self) -> list[str]:
        """Tensors whose rows are indexed by the unit vocabulary."""
        if self.cfg.embed_dim:
            return [f"{self.prefix}/embedding"]
        return [f"{self.prefix}/lstm1/kernel"]

    def lstm(self, params: Params, d: int) -> LstmParams:
        return LstmParams(params[f"{self.prefix}/lstm{d}/kernel"], params[f"{self.prefix}/lstm{d}/bias"])

    def _inputs(self, params: Params, rows: np.ndarray) -> np.ndarray:
        if self.cfg.embed_dim:
            return params[f"{self.prefix}/embedding"][rows]
        onehot = np.zeros((*rows.shape, self.cfg.num_labels + 1))
        np.put_along_axis(onehot, rows[..., None], 1.0, axis=-1)
        return onehot

    def input_rows(self, labels: Sequence[int]) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if len(labels) and (labels.min() < 0 or labels.max() >= self.cfg.num_labels):
            raise ShapeError(f"labels must lie in [0, {self.cfg.num_labels})")
        return np.concatenate([[0], labels + 1])

    def forward(self, params: Params, labels: Sequence[int]):
        """Outputs for u = 0..U given the start symbol followed by ``labels``."""
        return self.forward_rows(params, self.input_rows(labels))

    def forward_rows(self, params: Params, rows: np.ndarray):
        h = self._inputs(params, rows)
        caches = []
        for d in range(1, self.cfg.depth + 1):
            h, _, cache = lstm_forward(self.lstm(params, d), h)
            caches.append(cache)
        return h, (rows, caches)

    def backward(self, cache, d_out: np.ndarray) -> Params:
        rows, caches = cache
        grads = {}
        d_h = d_out
        for d in range(self.cfg.depth, 0, -1):
            d_h, g, _ = lstm_backward(d_h, caches[d - 1])
            grads[f"{self.prefix}/lstm{d}/kernel"] = g.kernel
            grads[f"{self.prefix}/lstm{d}/bias"] = g.bias
        if self.cfg.embed_dim:
            d_emb = np.zeros((self.cfg.num_labels + 1, self.cfg.embed_dim))
            np.add.at(d_emb, rows.reshape(-1), d_h.reshape(-1, self.cfg.embed_dim))
            grads[f"{self.prefix}/embedding"] = d_emb
        return grads

    def start_state(self):
        return None

    def step(self, params: Params, label: int | None, state):
        """Advance one label (``None`` = start symbol). Returns ``(output, state)``."""
        row = np.array(0 if label is None else label + 1)
        x = self._inputs(params, row)
        new_state = []
        for d in range(1, self.cfg.depth + 1):
            x, s = lstm_step(self.lstm(params, d), x, None if state is None else state[d - 1])
            new_state.append(s)
        return x, tuple(new_state)


def _reorder(grads: Params, params: Params) -> Params:
    return {name: grads[name] for name in params}


class RnntModel:
    """Encoder + prediction network + additive-tanh joint network."""

    kind = "rnnt"

    def __init__(self, encoder: EncoderConfig, decoder: DecoderConfig, joint_dim: int = 64):
        self.encoder = Encoder(encoder)
        self.decoder = PredictionNet(decoder)
        self.joint_dim = joint_dim
        self.num_labels = decoder.num_labels

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "encoder": asdict(self.encoder.cfg),
            "decoder": asdict(self.decoder.cfg),
            "joint_dim": self.joint_dim,
        }

    def init(self, rng: np.random.Generator) -> Params:
        params = self.encoder.init(rng)
        params.update(self.decoder.init(rng))
        jp = init_joint(rng, self.encoder.cfg.width, self.decoder.cfg.width, self.joint_dim, self.num_labels + 1)
        for name, value in zip(("enc_proj", "dec_proj", "bias", "out/kernel", "out/bias"), jp):
            params[f"joint/{name}"] = value
        return params

    @staticmethod
    def joint_params(params: Params) -> JointParams:
        return JointParams(
            params["joint/enc_proj"],
            params["joint/dec_proj"],
            params["joint/bias"],
            params["joint/out/kernel"],
            params["joint/out/bias"],
        )

    def encode(self, params: Params, xs: np.ndarray) -> np.ndarray:
        return self.encoder.forward(params, xs)[0]

    def lattice(self, params: Params, xs: np.ndarray, labels: Sequence[int], temperature: float = 1.0):
        h_enc = self.encode(params, xs)
        h_dec, _ = self.decoder.forward(params, labels)
        logits, _ = joint_grid_forward(h_enc, h_dec, self.joint_params(params))
        return softmax_with_temperature(logits, temperature)

    def log_probs(self, params: Params, h_enc_t: np.ndarray, h_dec: np.ndarray, temperature: float = 1.0):
        """One lattice slice log P(. | t, u) from encoder and prediction outputs."""
        return softmax_with_temperature(joint_forward(h_enc_t, h_dec, self.joint_params(params)), temperature)

    def loss_and_grad(self, params: Params, xs: np.ndarray, labels: Sequence[int]):
        """RNN-T loss of one utterance, gradients for every parameter, and d loss / d xs."""
        h_enc, _, enc_cache = self.encoder.forward(params, xs)
        h_dec, dec_cache = self.decoder.forward(params, labels)
        return self._loss_from_outputs(params, h_enc, h_dec, labels, enc_cache, dec_cache)

    def _loss_from_outputs(self, params, h_enc, h_dec, labels, enc_cache, dec_cache):
        logits, joint_cache = joint_grid_forward(h_enc, h_dec, self.joint_params(params))
        loss, d_logits = rnnt_loss_and_gradient(log_softmax(logits), labels)
        d_enc, d_dec, jg = joint_grid_backward(d_logits, joint_cache)
        grads, d_xs = self.encoder.backward(enc_cache, d_enc)
        grads.update(self.decoder.backward(dec_cache, d_dec))
        for name, value in zip(("enc_proj", "dec_proj", "bias", "out/kernel", "out/bias"), jg):
            grads[f"joint/{name}"] = value
        return loss, _reorder(grads, params), d_xs

    def batch_loss_and_grad(self, params: Params, batch: Sequence[tuple[np.ndarray, Sequence[int]]]):
        """Summed loss and gradients over a batch, running the recurrent stacks padded.

        Padding sits at the end of each sequence and every recurrent layer is
        causal, so valid positions see exactly the unpadded computation.
        """
        B = len(batch)
        frames = [len(xs) for xs, _ in batch]
        lens = [len(lab) for _, lab in batch]
        X = np.zeros((max(frames), B, self.encoder.cfg.input_dim))
        rows = np.zeros((max(lens) + 1, B), dtype=np.int64)
        for b, (xs, lab) in enumerate(batch):
            X[: frames[b], b] = xs
            rows[: lens[b] + 1, b] = self.decoder.input_rows(lab)
        H_enc, _, enc_cache = self.encoder.forward(params, X, frames)
        H_dec, dec_cache = self.decoder.forward_rows(params, rows)
        d_enc = np.zeros_like(H_enc)
        d_dec = np.zeros_like(H_dec)
        jp = self.joint_params(params)
        jgrads = [np.zeros_like(p) for p in jp]
        total = 0.0
        for b, (_, lab) in enumerate(batch):
            T_b = self.encoder.cfg.reduced_length(frames[b])
            logits, joint_cache = joint_grid_forward(H_enc[:T_b, b], H_dec[: lens[b] + 1, b], jp)
            loss, d_logits = rnnt_loss_and_gradient(log_softmax(logits), lab)
            total += loss
            de, dd, jg = joint_grid_backward(d_logits, joint_cache)
            d_enc[:T_b, b] = de
            d_dec[: lens[b] + 1, b] = dd
            for acc, g in zip(jgrads, jg):
                acc += g
        grads, _ = self.encoder.backward(enc_cache, d_enc)
        grads.update(self.decoder.backward(dec_cache, d_dec))
        for name, value in zip(("enc_proj", "dec_proj", "bias", "out/kernel", "out/bias"), jgrads):
            grads[f"joint/{name}"] = value
        return total, _reorder(grads, params)


class CtcModel:
    """Encoder with one CTC softmax head per hierarchical tap."""

    kind = "ctc"

    def __init__(self, encoder: EncoderConfig, taps: Sequence[tuple[Tap, int]]):
        """``taps`` pairs each :class:`Tap` with the size of its unit vocabulary."""
        self.encoder = Encoder(encoder)
        self.spec = HierarchicalLossSpec(tuple(t for t, _ in taps))
        self.tap_sizes = [n for _, n in taps]
        for tap in self.spec.taps:
            if not 1 <= tap.depth <= encoder.depth:
                raise ValueError(f"tap depth {tap.depth} outside encoder depth {encoder.depth}")

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "encoder": asdict(self.encoder.cfg),
            "taps": [[asdict(t), n] for t, n in zip(self.spec.taps, self.tap_sizes)],
        }

    def init(self, rng: np.random.Generator) -> Params:
        params = self.encoder.init(rng)
        for j, n in enumerate(self.tap_sizes):
            params[f"ctc/tap{j + 1}/kernel"] = uniform_init(rng, (self.encoder.cfg.width, n + 1))
            params[f"ctc/tap{j + 1}/bias"] = np.zeros(n + 1)
        return params

    def tap_log_probs(self, params: Params, xs: np.ndarray) -> list[np.ndarray]:
        _, outs, _ = self.encoder.forward(params, xs)
        return [
            log_softmax(dense_forward(outs[tap.depth - 1], params[f"ctc/tap{j + 1}/kernel"], params[f"ctc/tap{j + 1}/bias"]))
            for j, tap in enumerate(self.spec.taps)
        ]

    def loss_and_grad(self, params: Params, xs: np.ndarray, targets: Sequence[Sequence[int]]):
        """Weighted CTC loss over taps. Infeasible taps contribute nothing.

        Returns ``(total, grads, d_xs, per_tap_losses)``; an infeasible tap's
        entry in ``per_tap_losses`` is ``inf``.
        """
        if len(targets) != len(self.spec.taps):
            raise ValueError(f"got {len(targets)} targets for {len(self.spec.taps)} taps")
        _, outs, enc_cache = self.encoder.forward(params, xs)
        results, heads = [], []
        for j, (tap, target) in enumerate(zip(self.spec.taps, targets)):
            feats = outs[tap.depth - 1]
            kernel, bias = params[f"ctc/tap{j + 1}/kernel"], params[f"ctc/tap{j + 1}/bias"]
            res = ctc_loss(log_softmax(dense_forward(feats, kernel, bias)), target)
            heads.append((feats, kernel))
            results.append(res)
        feasible = [(r.loss if r.feasible else 0.0, r.gradient) for r in results]
        total, scaled = combine_hierarchical(feasible, self.spec)
        grads, d_taps = {}, {}
        for j, (tap, g) in enumerate(zip(self.spec.taps, scaled)):
            feats, kernel = heads[j]
            d_feats, dk, db = dense_backward(g, feats, kernel)
            grads[f"ctc/tap{j + 1}/kernel"] = dk
            grads[f"ctc/tap{j + 1}/bias"] = db
            d_taps[tap.depth] = d_taps.get(tap.depth, 0) + d_feats
        enc_grads, d_xs = self.encoder.backward(enc_cache, None, d_taps)
        grads.update(enc_grads)
        return total, _reorder(grads, params), d_xs, [r.loss for r in results]


    def batch_loss_and_grad(self, params: Params, batch: Sequence[tuple[np.ndarray, Sequence[Sequence[int]]]]):
        """Summed weighted CTC loss over a padded batch; infeasible taps are skipped.

        Returns ``(total, grads, n_infeasible)``.
        """
        B = len(batch)
        frames = [len(xs) for xs, _ in batch]
        X = np.zeros((max(frames), B, self.encoder.cfg.input_dim))
        for b, (xs, _) in enumerate(batch):
            X[: frames[b], b] = xs
        _, outs, enc_cache = self.encoder.forward(params, X, frames)
        grads = {}
        d_taps: dict[int, np.ndarray] = {}
        total, n_infeasible = 0.0, 0
        for j, tap in enumerate(self.spec.taps):
            kernel, bias = params[f"ctc/tap{j + 1}/kernel"], params[f"ctc/tap{j + 1}/bias"]
            feats = outs[tap.depth - 1]
            lp = log_softmax(dense_forward(feats, kernel, bias))
            d_logits = np.zeros_like(lp)
            scale = tap.weight
            for b, (_, targets) in enumerate(batch):
                T_b = self.encoder.cfg.tap_length(tap.depth, frames[b])
                res = ctc_loss(lp[:T_b, b], targets[j])
                if not res.feasible:
                    n_infeasible += 1
                    continue
                total += scale * res.loss
                d_logits[:T_b, b] = scale * res.gradient
            d_feats, dk, db = dense_backward(d_logits, feats, kernel)
            grads[f"ctc/tap{j + 1}/kernel"] = dk
            grads[f"ctc/tap{j + 1}/bias"] = db
            d_taps[tap.depth] = d_taps.get(tap.depth, 0) + d_feats
        enc_grads, _ = self.encoder.backward(enc_cache, None, d_taps)
        grads.update(enc_grads)
        return total, _reorder(grads, params), n_infeasible


class LmModel:
    """Prediction-network-shaped LSTM LM with a softmax over labels + end-of-sentence."""

    kind = "lm"

    def __init__(self, decoder: DecoderConfig):
        self.decoder = PredictionNet(decoder)
        self.num_labels = decoder.num_labels
        self.eos = decoder.num_labels

    def config(self) -> dict:
        return {"kind": self.kind, "decoder": asdict(self.decoder.cfg)}

    def init(self, rng: np.random.Generator) -> Params:
        params = self.decoder.init(rng)
        params["lm/softmax/kernel"] = uniform_init(rng, (self.decoder.cfg.width, self.num_labels + 1))
        params["lm/softmax/bias"] = np.zeros(self.num_labels + 1)
        return params

    def log_probs(self, params: Params, labels: Sequence[int]) -> np.ndarray:
        """Next-label distributions at each of the ``len(labels) + 1`` positions."""
        h, _ = self.decoder.forward(params, labels)
        return log_softmax(dense_forward(h, params["lm/softmax/kernel"], params["lm/softmax/bias"]))

    def nll_and_grad(self, params: Params, labels: Sequence[int]):
        """Summed next-label NLL (ending with end-of-sentence) and its gradients."""
        h, cache = self.decoder.forward(params, labels)
        logits = dense_forward(h, params["lm/softmax/kernel"], params["lm/softmax/bias"])
        lp = log_softmax(logits)
        targets = np.append(np.asarray(labels, dtype=np.int64), self.eos)
        pos = np.arange(len(targets))
        nll = -float(lp[pos, targets].sum())
        d_logits = np.exp(lp)
        d_logits[pos, targets] -= 1.0
        d_h, dk, db = dense_backward(d_logits, h, params["lm/softmax/kernel"])
        grads = self.decoder.backward(cache, d_h)
        grads["lm/softmax/kernel"] = dk
        grads["lm/softmax/bias"] = db
        return nll, len(targets), _reorder(grads, params)


    def batch_nll_and_grad(self, params: Params, batch: Sequence[Sequence[int]]):
        """:meth:`nll_and_grad` summed over a batch, with the LSTM stack run padded."""
        B = len(batch)
        lens = [len(lab) for lab in batch]
        L = max(lens) + 1
        rows = np.zeros((L, B), dtype=np.int64)
        targets = np.zeros((L, B), dtype=np.int64)
        mask = np.zeros((L, B))
        for b, lab in enumerate(batch):
            rows[: lens[b] + 1, b] = self.decoder.input_rows(lab)
            targets[: lens[b], b] = lab
            targets[lens[b], b] = self.eos
            mask[: lens[b] + 1, b] = 1.0
        h, cache = self.decoder.forward_rows(params, rows)
        lp = log_softmax(dense_forward(h, params["lm/softmax/kernel"], params["lm/softmax/bias"]))
        picked = np.take_along_axis(lp, targets[..., None], axis=-1)[..., 0]
        nll = -float((picked * mask).sum())
        d_logits = np.exp(lp)
        np.put_along_axis(d_logits, targets[..., None], np.take_along_axis(d_logits, targets[..., None], -1) - 1.0, -1)
        d_logits *= mask[..., None]
        d_h, dk, db = dense_backward(d_logits, h, params["lm/softmax/kernel"])
        grads = self.decoder.backward(cache, d_h)
        grads["lm/softmax/kernel"] = dk
        grads["lm/softmax/bias"] = db
        return nll, int(mask.sum()), _reorder(grads, params)


def build_model(config: dict):
    """Rebuild a model object from :meth:`config` output (e.g. checkpoint metadata)."""
    kind = config["kind"]
    if kind == "rnnt":
        return RnntModel(EncoderConfig(**config["encoder"]), DecoderConfig(**config["decoder"]), config["joint_dim"])
    if kind == "ctc":
        return CtcModel(EncoderConfig(**config["encoder"]), [(Tap(**t), n) for t, n in config["taps"]])
    if kind == "lm":
        return LmModel(DecoderConfig(**config["decoder"]))
    raise ValueError(f"unknown model kind {kind!r}")
