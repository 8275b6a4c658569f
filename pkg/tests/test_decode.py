import itertools
import math

import numpy as np
import pytest

from rnnt_toolkit.decode import (
    BoundTransducer,
    DecodeConfig,
    beam_search,
    greedy_stream_decode,
    stream_greedy,
    word_error_rate,
)
from rnnt_toolkit.nnet import DecoderConfig, EncoderConfig, RnntModel
from rnnt_toolkit.nnet.layers import softmax_with_temperature

from oracles import edit_distance, rnnt_brute_force_logprob

NEG = -np.inf


class TableTransducer:
    """P(k | t, u) read from a fixed (T, U_max + 1, V + 1) probability table."""

    def __init__(self, probs):
        with np.errstate(divide="ignore"):
            self.table = np.log(np.asarray(probs, dtype=np.float64))
        self.blank = self.table.shape[2] - 1
        self.predict_calls = 0

    def encode(self, frames):
        return np.arange(self.table.shape[0])

    def predict(self, label, state):
        self.predict_calls += 1
        labels = () if label is None else state + (label,)
        return min(len(labels), self.table.shape[1] - 1), labels

    def log_probs(self, t, u, temperature=1.0):
        row = self.table[t, u]
        if temperature == 1.0:
            return row
        scaled = row / temperature
        m = scaled.max()
        return scaled - m - np.log(np.exp(scaled - m).sum())


def one_hot_table(T, U_max, V, script):
    """``script[(t, u)] = k``; unspecified nodes emit blank with certainty."""
    probs = np.zeros((T, U_max + 1, V + 1))
    probs[:, :, V] = 1.0
    for (t, u), k in script.items():
        probs[t, u] = 0.0
        probs[t, u, k] = 1.0
    return probs


def small_model(seed, V=3, frames=3, scale=1.5, blank_bias=0.0):
    rng = np.random.default_rng(seed)
    model = RnntModel(
        EncoderConfig(input_dim=2, depth=1, width=4),
        DecoderConfig(num_labels=V, depth=1, width=4, embed_dim=3),
        joint_dim=5,
    )
    params = {k: rng.standard_normal(v.shape) * scale for k, v in model.init(rng).items()}
    params["joint/out/bias"][V] += blank_bias
    xs = rng.standard_normal((frames, 2))
    return model, params, xs


def exhaustive_map(model, params, xs, V, max_len, temperature):
    """Most probable output sequence of length <= max_len, alignments summed by enumeration."""
    best = None
    for n in range(max_len + 1):
        for y in itertools.product(range(V), repeat=n):
            lattice = model.lattice(params, xs, list(y), temperature)
            lp = rnnt_brute_force_logprob(lattice, list(y))
            if best is None or lp > best[1]:
                best = (y, lp)
    return best


class TestGreedy:
    def test_all_blank_lattice(self):
        model = TableTransducer(one_hot_table(5, 2, 3, {}))
        events = list(stream_greedy(model, None))
        assert [e.label for e in events] == [None] * 5
        assert greedy_stream_decode(model, None) == []

    def test_one_hot_spelling(self):
        model = TableTransducer(one_hot_table(4, 3, 3, {(0, 0): 2, (1, 1): 0, (1, 2): 1}))
        assert greedy_stream_decode(model, None) == [2, 0, 1]
        events = list(stream_greedy(model, None))
        assert events[-1].frame == 3 and events[-1].label is None

    def test_symbol_cap_forces_frame_advance(self):
        probs = np.zeros((3, 8, 3))
        probs[:, :, 1] = 1.0
        model = TableTransducer(probs)
        events = list(stream_greedy(model, None, max_symbols_per_frame=2))
        assert greedy_stream_decode(model, None, 2) == [1] * 6
        assert sum(e.forced for e in events) == 3

    def test_tie_goes_to_lowest_index(self):
        probs = np.full((1, 3, 3), 1 / 3)
        model = TableTransducer(probs)
        assert greedy_stream_decode(model, None, max_symbols_per_frame=1) == [0]

    @pytest.mark.parametrize("seed", range(8))
    def test_blank_count_identity(self, seed):
        model, params, xs = small_model(seed, frames=6, scale=1.0, blank_bias=5.0)
        events = list(stream_greedy(BoundTransducer(model, params), xs))
        n_out = sum(e.label is not None for e in events)
        assert sum(e.label is None for e in events) == 6
        assert len(events) == 6 + n_out
        assert events[-1].frame == 5 and events[-1].label is None
        assert not any(e.forced for e in events)

    @pytest.mark.parametrize("seed", range(8))
    def test_blank_count_identity_under_cap(self, seed):
        # strongly-weighted random nets often loop on a label; the cap still
        # yields exactly one (possibly forced) blank per frame
        model, params, xs = small_model(seed, frames=6, scale=3.0)
        events = list(stream_greedy(BoundTransducer(model, params), xs, max_symbols_per_frame=4))
        assert sum(e.label is None for e in events) == 6
        assert all(sum(e.frame == t and e.label is not None for e in events) <= 4 for t in range(6))
        assert events[-1].frame == 5 and events[-1].label is None

    def test_temperature_keeps_argmax(self, rng):
        for _ in range(50):
            z = rng.standard_normal(6)
            assert np.argmax(softmax_with_temperature(z, 1.5)) == np.argmax(softmax_with_temperature(z, 1.0))


class TestBeam:
    def test_defaults(self):
        assert DecodeConfig.for_units("grapheme").beam == 100
        assert DecodeConfig.for_units("wordpiece").beam == 25
        assert DecodeConfig.for_units("wordpiece").temperature == 1.5
        assert DecodeConfig().max_symbols_per_frame == 10

    @pytest.mark.parametrize("kwargs", [{"beam": 0}, {"temperature": 0.0}, {"max_symbols_per_frame": 0}])
    def test_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            DecodeConfig(**kwargs)

    def test_beam1_one_hot_equals_greedy(self):
        model = TableTransducer(one_hot_table(4, 3, 3, {(0, 0): 2, (1, 1): 0, (3, 2): 1}))
        hyps = beam_search(model, None, DecodeConfig(beam=1, temperature=1.0))
        assert list(hyps[0].labels) == greedy_stream_decode(model, None) == [2, 0, 1]
        assert hyps[0].score == 0.0

    def test_two_frame_exhaustive(self):
        # T=2, U<=1, V=2 toy: enumerate by hand through the table
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=(2, 2))
        probs[:, 1] = [0.0, 0.0, 1.0]  # after one label only blank
        model = TableTransducer(probs)
        hyps = beam_search(model, None, DecodeConfig(beam=1000, temperature=1.0))
        p_empty = probs[0, 0, 2] * probs[1, 0, 2]
        p_label = [probs[0, 0, k] * probs[0, 1, 2] * probs[1, 1, 2] + probs[0, 0, 2] * probs[1, 0, k] * probs[1, 1, 2] for k in range(2)]
        scores = {h.labels: h.score for h in hyps}
        assert scores[()] == pytest.approx(math.log(p_empty), abs=1e-12)
        for k in range(2):
            assert scores[(k,)] == pytest.approx(math.log(p_label[k]), abs=1e-12)
        assert math.fsum(math.exp(s) for s in scores.values()) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_saturating_beam_finds_map(self, seed):
        V = 2 + seed % 2
        model, params, xs = small_model(100 + seed, V=V, frames=3)
        for temperature in (1.0, 1.5):
            cfg = DecodeConfig(beam=10_000, temperature=temperature, max_output_length=3)
            hyps = beam_search(BoundTransducer(model, params), xs, cfg)
            y, lp = exhaustive_map(model, params, xs, V, 3, temperature)
            assert hyps[0].labels == y
            assert hyps[0].score == pytest.approx(lp, abs=1e-9)

    def test_scores_sorted_and_states_replay(self):
        model, params, xs = small_model(7, frames=4)
        bound = BoundTransducer(model, params)
        hyps = beam_search(bound, xs, DecodeConfig(beam=8, temperature=1.5))
        assert len(hyps) == 8
        assert all(a.score >= b.score for a, b in zip(hyps, hyps[1:]))
        for h in hyps:
            out, state = bound.predict(None, None)
            for k in h.labels:
                out, state = bound.predict(k, state)
            np.testing.assert_allclose(h.state[0], out, atol=1e-14)

    @pytest.mark.parametrize("seed", range(6))
    def test_best_score_monotone_in_beam(self, seed):
        model, params, xs = small_model(200 + seed, frames=4, scale=1.0)
        bound = BoundTransducer(model, params)
        best = [beam_search(bound, xs, DecodeConfig(beam=w, temperature=1.0))[0].score for w in (1, 2, 4, 8, 16)]
        assert all(b >= a - 1e-12 for a, b in zip(best, best[1:]))

    @pytest.mark.parametrize("seed", range(10))
    def test_beam1_matches_greedy_on_peaked_lattice(self, seed):
        rng = np.random.default_rng(seed)
        T, U_max, V = 5, 12, 3
        choice = rng.integers(0, V + 1, size=(T, U_max + 1))
        choice[:, U_max] = V
        probs = np.full((T, U_max + 1, V + 1), 0.1 / V)
        probs[np.arange(T)[:, None], np.arange(U_max + 1)[None, :], choice] = 0.9
        model = TableTransducer(probs)
        greedy = greedy_stream_decode(model, None)
        assert list(beam_search(model, None, DecodeConfig(beam=1, temperature=1.0))[0].labels) == greedy


class TestWer:
    def test_identical(self):
        assert word_error_rate("a b c", "a b c").wer == 0.0

    def test_substitution(self):
        r = word_error_rate("a b c", "a x c")
        assert r.wer == pytest.approx(1 / 3)
        assert (r.substitutions, r.insertions, r.deletions) == (1, 0, 0)

    def test_tortoise_hair(self):
        r = word_error_rate("tortoise and the hare", "tortoise and the hair")
        assert r.wer == 0.25 and r.substitutions == 1

    def test_insertions_deletions(self):
        r = word_error_rate("a b c d", "a c d e f")
        assert r.deletions == 1 and r.insertions == 2 and r.substitutions == 0
        assert r.wer == 0.75

    def test_empty_reference(self):
        r = word_error_rate("", "a b")
        assert r.empty_reference and r.wer == 2.0 and r.insertions == 2
        assert word_error_rate("", "").wer == 0.0

    def test_matches_edit_distance(self, rng):
        for _ in range(200):
            ref = list(rng.integers(0, 4, size=rng.integers(0, 7)))
            hyp = list(rng.integers(0, 4, size=rng.integers(0, 7)))
            assert word_error_rate(ref, hyp).errors == edit_distance(ref, hyp)
