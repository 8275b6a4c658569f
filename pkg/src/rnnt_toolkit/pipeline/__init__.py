"""Synthetic tasks, the staged training recipe and evaluation."""

from .config import TrainingConfig
from .data import Utterance, read_features, stack_frames, write_features
from .evaluate import EvalReport, evaluate, greedy_label_error, score
from .synthetic import Dataset, SyntheticTask, generate_task, load_task, save_task
from .train import RUN_DIR_ENV, StageResult, load_model, run_stage

__all__ = [
    "RUN_DIR_ENV",
    "Dataset",
    "EvalReport",
    "StageResult",
    "SyntheticTask",
    "TrainingConfig",
    "Utterance",
    "evaluate",
    "generate_task",
    "greedy_label_error",
    "load_model",
    "load_task",
    "read_features",
    "run_stage",
    "save_task",
    "score",
    "stack_frames",
    "write_features",
]
