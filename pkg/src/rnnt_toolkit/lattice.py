"""RNN-T loss over the (frame, emitted-label) alignment lattice.

A lattice is an array of shape ``(T, U + 1, V + 1)`` holding log P(k | t, u),
where node ``(t, u)`` means "t frames consumed, u labels emitted" and the
last label index ``V`` is the blank. A path starts at ``(0, 0)``, moves
``u -> u + 1`` by emitting ``target[u]`` and ``t -> t + 1`` by emitting a
blank, and ends with a blank at ``(T - 1, U)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

NEG_INF = float("-inf")


def logsumexp(values: Iterable[float]) -> float:
    """Stable log(sum(exp(values))); the empty sum is ``-inf``."""
    arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if arr.size == 0:
        return NEG_INF
    m = np.max(arr)
    if not np.isfinite(m):
        # all -inf, or a +inf / nan dominates
        return float(m)
    return float(m + np.log(np.sum(np.exp(arr - m))))


@dataclass(frozen=True)
class AlphaBetaGrid:
    alpha: np.ndarray  # (T, U + 1)
    beta: np.ndarray  # (T, U + 1)
    log_z: float

    def to_csv(self, prefix: str | Path) -> tuple[Path, Path]:
        """Write ``<prefix>.alpha.csv`` and ``<prefix>.beta.csv`` (row=t, col=u)."""
        prefix = Path(prefix)
        paths = []
        for name, grid in (("alpha", self.alpha), ("beta", self.beta)):
            path = prefix.with_name(f"{prefix.name}.{name}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                for row in grid:
                    writer.writerow([f"{v:.17g}" for v in row])
            paths.append(path)
        return paths[0], paths[1]


def _check(lattice: np.ndarray, target: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.ndim != 3:
        raise ShapeError(f"lattice must be 3-D (T, U+1, V+1), got shape {lattice.shape}")
    T, U1, V1 = lattice.shape
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if T < 1:
        raise ShapeError("lattice has no frames (T=0)")
    if V1 < 2:
        raise ShapeError(f"lattice needs at least one non-blank label, got V+1={V1}")
    if U1 != len(target) + 1:
        raise ShapeError(f"target length {len(target)} does not match lattice U+1={U1}")
    if len(target) and (target.min() < 0 or target.max() >= V1 - 1):
        raise ShapeError(f"target labels must lie in [0, {V1 - 1})")
    return lattice, target


def _blank_emit(lattice: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T, U1, V1 = lattice.shape
    blank = lattice[:, :, V1 - 1]
    U = U1 - 1
    emit = lattice[:, np.arange(U), target] if U else np.zeros((T, 0))
    return blank, emit


def _alpha(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    U = U1 - 1
    alpha = np.full((T, U1), NEG_INF)
    alpha[0, 0] = 0.0
    # sweep anti-diagonals n = t + u; both predecessors lie on diagonal n - 1
    for n in range(1, T + U):
        t = np.arange(max(0, n - U), min(T - 1, n) + 1)
        u = n - t
        from_blank = np.full(t.shape, NEG_INF)
        ok = t > 0
        from_blank[ok] = alpha[t[ok] - 1, u[ok]] + blank[t[ok] - 1, u[ok]]
        from_emit = np.full(t.shape, NEG_INF)
        ok = u > 0
        from_emit[ok] = alpha[t[ok], u[ok] - 1] + emit[t[ok], u[ok] - 1]
        alpha[t, u] = np.logaddexp(from_blank, from_emit)
    return alpha


def _beta(blank: np.ndarray, emit: np.ndarray) -> np.ndarray:
    T, U1 = blank.shape
    U = U1 - 1
    beta = np.full((T, U1), NEG_INF)
    beta[T - 1, U] = blank[T - 1, U]
    for n in range(T + U - 2, -1, -1):
        t = np.arange(max(0, n - U), min(T - 1, n) + 1)
        u = n - t
        to_blank = np.full(t.shape, NEG_INF)
        ok = t < T - 1
        to_blank[ok] = blank[t[ok], u[ok]] + beta[t[ok] + 1, u[ok]]
        to_emit = np.full(t.shape, NEG_INF)
        ok = u < U
        to_emit[ok] = emit[t[ok], u[ok]] + beta[t[ok], u[ok] + 1]
        beta[t, u] = np.logaddexp(to_blank, to_emit)
    return beta


def rnnt_forward(lattice: np.ndarray, target: Sequence[int]) -> tuple[float, AlphaBetaGrid]:
    """Negative log-likelihood of ``target`` summed over all lattice alignments.

    Returns the loss and the forward/backward grids that produced it.
    """
    lattice, target = _check(lattice, target)
    blank, emit = _blank_emit(lattice, target)
    alpha = _alpha(blank, emit)
    beta = _beta(blank, emit)
    log_z = float(beta[0, 0])
    return -log_z, AlphaBetaGrid(alpha=alpha, beta=beta, log_z=log_z)


def _gradients(lattice, target, grid, wrt):
    T, U1, V1 = lattice.shape
    U = U1 - 1
    blank, emit = _blank_emit(lattice, target)
    alpha, beta, log_z = grid.alpha, grid.beta, grid.log_z

    # d loss / d log P(k|t,u): minus the posterior probability of using that arc
    g = np.zeros_like(lattice)
    beta_next_t = np.full((T, U1), NEG_INF)
    beta_next_t[:-1] = beta[1:]
    beta_next_t[T - 1, U] = 0.0  # terminal blank closes the path
    g[:, :, V1 - 1] = -np.exp(alpha + blank + beta_next_t - log_z)
    if U:
        arc = -np.exp(alpha[:, :U] + emit + beta[:, 1:] - log_z)
        tt, uu = np.meshgrid(np.arange(T), np.arange(U), indexing="ij")
        np.add.at(g, (tt, uu, np.broadcast_to(target, (T, U))), arc)
    if wrt == "log_probs":
        return g
    if wrt != "logits":
        raise ValueError(f"wrt must be 'logits' or 'log_probs', got {wrt!r}")
    # chain through log_softmax: dz_j = g_j - p_j * sum_k g_k
    return g - np.exp(lattice) * g.sum(axis=2, keepdims=True)


def rnnt_gradient(lattice: np.ndarray, target: Sequence[int], wrt: str = "logits") -> np.ndarray:
    """Gradient of :func:`rnnt_forward`'s loss, same shape as ``lattice``.

    By default the gradient is taken with respect to the logits that the
    lattice is the log-softmax of (the full softmax Jacobian is applied).
    ``wrt="log_probs"`` returns the derivative with respect to the lattice
    entries treated as free variables.
    """
    lattice, target = _check(lattice, target)
    _, grid = rnnt_forward(lattice, target)
    return _gradients(lattice, target, grid, wrt)


def rnnt_loss_and_gradient(lattice: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    lattice, target = _check(lattice, target)
    loss, grid = rnnt_forward(lattice, target)
    return loss, _gradients(lattice, target, grid, "logits")
