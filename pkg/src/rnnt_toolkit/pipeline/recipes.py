"""Ready-made configurations and the paired ablation harness.

The ablations mirror the recipe's three claims at desk scale: CTC
pre-training of the encoder, LM pre-training of the prediction network and
wordpiece output units each help (or at least do not hurt) an RNN-T
trained for a fixed number of steps. Each claim is tested against the rung
below it, as in the incremental recipe.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from ..decode import DecodeConfig
from ..wordpiece import train_vocab
from .config import TrainingConfig
from .evaluate import score
from .synthetic import Dataset, SyntheticTask, generate_task
from .train import run_stage

CONVERGENCE_TASK = SyntheticTask(mode="labels", num_labels=20, noise=0.1, frames_per_label=3, dev_size=50, test_size=50)
CONVERGENCE_UTTERANCES = 600  # 500 train + 50 dev + 50 test


def convergence_config(seed: int = 0, steps: int = 5000) -> TrainingConfig:
    """2x64 encoder, 2x64 prediction network, joint 64; SGD with momentum."""
    return TrainingConfig.from_dict(
        {
            "seed": seed,
            "stage": "rnnt",
            "model": {"encoder": {"depth": 2, "width": 64}, "decoder": {"depth": 2, "width": 64}, "joint_dim": 64},
            "optimizer": {"learning_rate": 0.03, "momentum": 0.9, "clip_norm": 5.0, "batch_size": 8, "steps": steps},
        }
    )


ABLATION_TASK = SyntheticTask(
    mode="text",
    alphabet_size=10,
    lexicon_size=40,
    min_words=1,
    max_words=3,
    noise=0.1,
    frames_per_label=3,
    lm_sentences=2000,
    sound_classes=5,
    dev_size=30,
    test_size=30,
)


@dataclass(frozen=True)
class AblationSettings:
    utterances: int = 240
    rnnt_steps: int = 1000
    ctc_steps: int = 600
    lm_steps: int = 600
    width: int = 32
    wordpiece_extra: int = 16  # pieces beyond the grapheme floor
    learning_rate: float = 0.03
    final_learning_rate: float | None = None
    lm_learning_rate: float = 0.5  # per-label mean loss needs a larger step than per-utterance sums
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 8
    decode: DecodeConfig | None = None  # None = decode defaults per unit family
    task: SyntheticTask = ABLATION_TASK
    ctc_taps: tuple = ({"depth": 1, "family": "phoneme"}, {"depth": 2, "family": "grapheme"})


def _config(stage: str, seed: int, s: AblationSettings, steps: int, **extra) -> TrainingConfig:
    lr = s.lm_learning_rate if stage == "lm" else s.learning_rate
    data = {
        "seed": seed,
        "stage": stage,
        "model": {
            "encoder": {"depth": 2, "width": s.width},
            "decoder": {"depth": 2, "width": s.width},
            "joint_dim": s.width,
        },
        "optimizer": {
            "learning_rate": lr,
            "final_learning_rate": None if stage == "lm" else s.final_learning_rate,
            "momentum": s.momentum,
            "clip_norm": s.clip_norm,
            "batch_size": s.batch_size,
            "steps": steps,
        },
    }
    data.update(extra)
    return TrainingConfig.from_dict(data)


ABLATION_DIRECTIONS = (("ctc", "baseline"), ("ctc_lm", "ctc"), ("wordpiece", "ctc_lm"))
"""(treatment, control) pairs; a direction holds on a seed when treatment WER <= control WER."""


def ablation_seed(seed: int, workdir: str | Path, settings: AblationSettings = AblationSettings()) -> dict[str, float]:
    """Dev WER of four RNN-T variants, each trained for ``rnnt_steps`` steps.

    The variants climb one rung at a time:

    * ``baseline``: graphemes, fresh weights;
    * ``ctc``: encoder from a hierarchical CTC model (``settings.ctc_taps``);
    * ``ctc_lm``: as ``ctc`` plus a prediction network from a grapheme LM;
    * ``wordpiece``: wordpiece units with the same two pre-training stages,
      the top CTC tap switched to wordpieces.
    """
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    dataset = dataset_for(seed, settings)
    s = settings

    def dev_wer(result) -> float:
        return score(result.model, result.params, result.vocab, dataset.dev, config=s.decode).wer

    def rnnt(name: str, **extra) -> float:
        return dev_wer(run_stage(_config("rnnt", seed, s, s.rnnt_steps, **extra), dataset, work / name))

    def pretrain(name: str, units: dict | None, top_family: str):
        units = {"units": units} if units else {}
        taps = [dict(t) for t in s.ctc_taps]
        taps[-1]["family"] = top_family
        ctc = run_stage(_config("ctc", seed, s, s.ctc_steps, ctc={"taps": taps}, **units), dataset, work / name)
        lm = run_stage(_config("lm", seed, s, s.lm_steps, **units), dataset, work / name)
        return str(ctc.checkpoint_path), str(lm.checkpoint_path)

    out = {"baseline": rnnt("baseline")}
    encoder, decoder = pretrain("grapheme", None, "grapheme")
    out["ctc"] = rnnt("ctc", transfer={"encoder": encoder})
    out["ctc_lm"] = rnnt("ctc_lm", transfer={"encoder": encoder, "decoder": decoder})

    vocab = train_vocab(dataset.word_counts(), len(dataset.vocab) + s.wordpiece_extra, dataset.vocab.symbols)
    vocab_path = work / "wordpiece.vocab"
    vocab.save(vocab_path)
    units = {"family": "wordpiece", "vocab": str(vocab_path)}
    encoder, decoder = pretrain("wordpiece", units, "wordpiece")
    out["wordpiece"] = rnnt("wordpiece", units=units, transfer={"encoder": encoder, "decoder": decoder})
    return out


def direction_holds(wers: dict[str, float], treatment: str, control: str) -> bool:
    return wers[treatment] <= wers[control]


def dataset_for(seed: int, settings: AblationSettings = AblationSettings()) -> Dataset:
    return generate_task(replace(settings.task, seed=seed), settings.utterances)
