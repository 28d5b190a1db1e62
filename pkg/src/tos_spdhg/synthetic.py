"""Small random saddle problems for rate experiments and tests."""

from __future__ import annotations

import numpy as np

from .functions import BoxIndicator, Quadratic, SquaredL2, ZeroSmooth
from .linalg import BlockLinearOperator
from .solvers import SaddleProblem

__all__ = ["make_identity_problem", "make_synthetic_problem"]


def make_synthetic_problem(dim: int = 50, n_blocks: int = 5, rows_per_block: int = 10,
                           mu: float = 0.1, seed: int = 0, noise: float = 0.1
                           ) -> SaddleProblem:
    """Random least-squares problem on the unit box.

    ``A_i`` has i.i.d. ``N(0, 1/rows_per_block)`` entries,
    ``f_i = 0.5 ||. - b_i||^2`` with ``b = A x_true + noise``, ``g`` is the
    ``[0, 1]`` box and ``h = mu/2 ||x - c||^2`` (so ``L = mu``). ``x_true``
    is drawn from ``[-0.5, 1.5]`` so the box is active at the solution.
    ``mu = 0`` gives ``h = 0``.
    """
    if min(dim, n_blocks, rows_per_block) < 1:
        raise ValueError("dim, n_blocks and rows_per_block must be >= 1")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    rng = np.random.default_rng(seed)
    blocks = [rng.standard_normal((rows_per_block, dim)) / np.sqrt(rows_per_block)
              for _ in range(n_blocks)]
    x_true = rng.uniform(-0.5, 1.5, dim)
    centre = rng.uniform(0.0, 1.0, dim)
    fs = [SquaredL2(blk @ x_true + noise * rng.standard_normal(rows_per_block))
          for blk in blocks]
    h = Quadratic(mu, centre) if mu > 0 else ZeroSmooth()
    return SaddleProblem(A=BlockLinearOperator(blocks), f_blocks=fs,
                         g=BoxIndicator(0.0, 1.0), h=h)


def make_identity_problem(dim: int = 3, mu: float = 0.0, seed: int = 0) -> SaddleProblem:
    """``A = I`` as a single block with ``f = 0.5 ||. - b||^2`` on the box."""
    rng = np.random.default_rng(seed)
    b = rng.uniform(-0.5, 1.5, dim)
    h = Quadratic(mu) if mu > 0 else ZeroSmooth()
    return SaddleProblem(A=BlockLinearOperator.identity(dim), f_blocks=[SquaredL2(b)],
                         g=BoxIndicator(0.0, 1.0), h=h)
