"""Saddle gap, reference solutions, PSNR and empirical rate fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .solvers import RunRecord, SaddleProblem, condat_vu, condat_vu_steps

__all__ = [
    "PSNR_CAP",
    "ReferenceSolution",
    "compute_reference",
    "make_monitor",
    "phi",
    "psnr",
    "rate_fit",
    "saddle_gap",
]

PSNR_CAP = 200.0


def phi(problem: SaddleProblem, x, y) -> float:
    """``h(x) + g(x) + sum_i <A_i x, y_i> - f_i^*(y_i)``; may be +-inf."""
    x = np.asarray(x, dtype=float)
    ax = problem.A.apply(x)
    if len(y) != len(ax):
        raise ValueError(f"expected {len(ax)} dual blocks, got {len(y)}")
    val = problem.h(x) + problem.g(x)
    for f, a, yi in zip(problem.f_blocks, ax, y):
        val += float(np.dot(a, yi)) - f.conj(yi)
    return val


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    y_star: List[np.ndarray]
    phi_at_saddle: float
    iterations: int
    movement: float
    certified: bool


def saddle_gap(problem: SaddleProblem, x, y, ref: ReferenceSolution) -> float:
    """``Phi(x, y*) - Phi(x*, y)``. Reported raw; an inexact reference can
    make it slightly negative."""
    return phi(problem, x, ref.y_star) - phi(problem, ref.x_star, y)


def compute_reference(problem: SaddleProblem, iters: int, tol: float = 1e-8,
                      gamma: float = 0.99, op_norm: Optional[float] = None
                      ) -> ReferenceSolution:
    """Approximate a saddle point with a long Condat-Vu run.

    The run is certified when the last relative primal movement
    ``||x^K - x^{K-1}|| / ||x^{K-1}||`` is at most ``tol``.
    """
    if iters <= 0:
        x = np.zeros(problem.dim)
        y = [np.zeros(m) for m in problem.A.block_dims]
        return ReferenceSolution(x, y, phi(problem, x, y), 0, np.inf, False)
    tau, sigma = condat_vu_steps(problem, gamma, op_norm)
    state, _ = condat_vu(problem, tau, sigma, iters, op_norm=op_norm)
    denom = np.linalg.norm(state.x_prev)
    move = np.linalg.norm(state.x - state.x_prev)
    move = move / denom if denom > 0 else move
    x_star = state.x.copy()
    y_star = [b.copy() for b in state.y]
    return ReferenceSolution(x_star, y_star, phi(problem, x_star, y_star),
                             iters, float(move), bool(move <= tol))


def psnr(x, ground_truth, peak: float = 1.0) -> float:
    x = np.asarray(x, dtype=float)
    ground_truth = np.asarray(ground_truth, dtype=float)
    if x.shape != ground_truth.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {ground_truth.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = float(np.sum((x - ground_truth) ** 2))
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 * x.size / err))


def rate_fit(ks, gaps=None, k_min: int = 1) -> float:
    """Least-squares slope of ``log(gap)`` against ``log(k)`` for ``k >= k_min``.

    ``ks`` may be a :class:`RunRecord`, in which case its ``k`` and ``gap``
    columns are used.
    """
    if isinstance(ks, RunRecord):
        ks, gaps = ks.column("k"), ks.column("gap")
    ks = np.asarray(ks, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    keep = ks >= k_min
    ks, gaps = ks[keep], gaps[keep]
    if ks.size < 5:
        raise ValueError(f"need at least 5 checkpoints with k >= {k_min}, got {ks.size}")
    if not np.all(np.isfinite(gaps)) or np.any(gaps <= 0):
        raise ValueError("gaps must be finite and positive for a log-log fit")
    slope, _ = np.polyfit(np.log(ks), np.log(gaps), 1)
    return float(slope)


def make_monitor(problem: SaddleProblem, reference: Optional[ReferenceSolution] = None,
                 ground_truth=None, peak: float = 1.0):
    """Checkpoint hook recording the primal objective and PSNR of the current
    iterate and the saddle gap of the ergodic averages."""

    def hook(cp):
        row = {"objective": problem.objective(cp.x)}
        if reference is not None:
            row["gap"] = saddle_gap(problem, cp.x_avg, cp.y_avg, reference)
        if ground_truth is not None:
            row["psnr"] = psnr(cp.x, ground_truth, peak)
        return row

    return hook
