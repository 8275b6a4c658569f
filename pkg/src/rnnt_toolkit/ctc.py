"""CTC loss and the weighted multi-depth (hierarchical) CTC combination."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeError

NEG_INF = float("-inf")
UNIT_FAMILIES = ("phoneme", "grapheme", "wordpiece")


class CtcResult(NamedTuple):
    loss: float
    gradient: np.ndarray  # d loss / d logits, shape (T, V + 1)
    feasible: bool


def min_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus a blank between repeats."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(grid: np.ndarray, target: Sequence[int]) -> CtcResult:
    """-log P(target | grid) summed over every blank-interleaved alignment.

    ``grid`` holds per-frame log-probabilities of shape ``(T, V + 1)`` with
    the blank at index ``V``. The gradient is taken with respect to the logits
    that ``grid`` is the log-softmax of. A target that cannot be emitted in
    ``T`` frames gives ``CtcResult(inf, zeros, feasible=False)``.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] < 2:
        raise ShapeError(f"CTC grid must have shape (T, V+1) with V >= 1, got {grid.shape}")
    T, V1 = grid.shape
    blank = V1 - 1
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if len(target) and (target.min() < 0 or target.max() >= blank):
        raise ShapeError(f"target labels must lie in [0, {blank})")
    if T == 0 or min_frames(target) > T:
        return CtcResult(float("inf"), np.zeros_like(grid), False)

    ext = np.full(2 * len(target) + 1, blank)
    ext[1::2] = target
    S = len(ext)
    # skip transition s-2 -> s allowed onto a label differing from the one two back
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = grid[:, ext]  # (T, S)

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(can_skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(can_skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, 0]
    occupancy = np.exp(alpha + beta - log_z)  # (T, S)
    gamma = np.zeros_like(grid)
    np.add.at(gamma, (slice(None), ext), occupancy)
    gradient = np.exp(grid) - gamma
    return CtcResult(float(-log_z), gradient, True)


@dataclass(frozen=True)
class Tap:
    depth: int
    family: str
    weight: float = 1.0


@dataclass(frozen=True)
class HierarchicalLossSpec:
    taps: tuple[Tap, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not self.taps:
            raise ValueError("hierarchical CTC needs at least one tap")
        depths = [t.depth for t in self.taps]
        if any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError(f"tap depths must be strictly increasing, got {depths}")
        for tap in self.taps:
            if tap.family not in UNIT_FAMILIES:
                raise ValueError(f"unknown unit family {tap.family!r}")
            if tap.weight < 0:
                raise ValueError(f"tap weights must be non-negative, got {tap.weight}")
        if sum(t.weight for t in self.taps) <= 0:
            raise ValueError("tap weights must sum to a positive value")

    @classmethod
    def equal(cls, *taps: tuple[int, str]) -> "HierarchicalLossSpec":
        return cls(tuple(Tap(depth, family, 1.0) for depth, family in taps))


def combine_hierarchical(
    losses: Sequence[tuple[float, np.ndarray]], spec: HierarchicalLossSpec
) -> tuple[float, list[np.ndarray]]:
    """Weighted sum of per-tap CTC losses; each tap's gradient is scaled by its weight."""
    if len(losses) != len(spec.taps):
        raise ValueError(f"got {len(losses)} losses for {len(spec.taps)} taps")
    total = 0.0
    grads = []
    for (loss, grad), tap in zip(losses, spec.taps):
        total += tap.weight * loss
        grads.append(tap.weight * np.asarray(grad))
    return total, grads
