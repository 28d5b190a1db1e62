"""Serial index samplers, ESO parameters and step-size certification."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .linalg import BlockLinearOperator, as_metric, power_method_norm

__all__ = [
    "ESO_SAFETY",
    "Sampler",
    "StepReport",
    "StepSizeError",
    "StepSizes",
    "default_step_rule",
    "eso_params_serial",
    "make_importance_sampler",
    "make_uniform_sampler",
    "validate_step_sizes",
]

ESO_SAFETY = 1.01


class StepSizeError(ValueError):
    """Raised when step sizes cannot be certified."""

    def __init__(self, message, eso_v=None, probs=None):
        super().__init__(message)
        self.eso_v = None if eso_v is None else np.asarray(eso_v)
        self.probs = None if probs is None else np.asarray(probs)


class Sampler:
    """Serial sampling: one block index per draw with probabilities ``probs``.

    Owns a ``numpy.random.Generator``; use one sampler per solver run.
    """

    def __init__(self, probs: Sequence[float], scheme: str = "weighted-serial",
                 seed: int = 0):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probabilities must be a non-empty vector")
        if np.any(probs <= 0):
            raise ValueError("all probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"serial probabilities must sum to 1, got {probs.sum()!r}")
        self.probs = probs
        self.scheme = scheme
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._cdf = list(np.cumsum(probs)[:-1])

    @property
    def n(self) -> int:
        return self.probs.size

    def draw(self) -> int:
        if not self._cdf:
            return 0
        return bisect.bisect_right(self._cdf, self.rng.random())

    def with_seed(self, seed: int) -> "Sampler":
        return Sampler(self.probs, self.scheme, seed)

    def __repr__(self):
        return f"Sampler(scheme={self.scheme!r}, n={self.n}, seed={self.seed})"


def make_uniform_sampler(n: int, seed: int = 0) -> Sampler:
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    return Sampler(np.full(n, 1.0 / n), "uniform-serial", seed)


def make_importance_sampler(block_norms: Sequence[float], seed: int = 0) -> Sampler:
    """``p_i`` proportional to ``||A_i||``."""
    norms = np.asarray(block_norms, dtype=float)
    if np.any(~(norms > 0)):
        raise ValueError("block norms must be strictly positive")
    return Sampler(norms / norms.sum(), "weighted-serial", seed)


@dataclass
class StepSizes:
    T: np.ndarray
    S: np.ndarray
    theta: float = 1.0
    lipschitz: float = 0.0
    eso_v: Optional[np.ndarray] = None
    valid: bool = False

    @property
    def tau(self) -> float:
        """Largest primal step (the scalar step when ``T`` is ``tau * I``)."""
        return float(np.max(self.T))


@dataclass
class StepReport:
    probs: np.ndarray
    eso_v: np.ndarray
    metric_ok: bool

    @property
    def margins(self) -> np.ndarray:
        return self.probs - self.eso_v

    def format_table(self) -> str:
        lines = [f"{'i':>4} {'p_i':>14} {'v_i':>14} {'margin':>14}"]
        for i, (p, v) in enumerate(zip(self.probs, self.eso_v)):
            lines.append(f"{i:>4d} {p:>14.8g} {v:>14.8g} {p - v:>14.8g}")
        if not self.metric_ok:
            lines.append("T^{-1} - L*I is not positive definite")
        return "\n".join(lines)


def _reduced_metric(T, L, dim):
    T = as_metric(T, dim)
    m = 1.0 / T - L
    if np.any(m <= 0):
        raise ValueError(
            f"T^{{-1}} - L*I is not positive definite (L={L:g}, max T={T.max():g}, "
            f"need max T < 1/L)")
    return m


def eso_params_serial(A: BlockLinearOperator, S: Sequence[float], T, L: float,
                      tol: float = 1e-8, seed: int = 0,
                      safety: float = ESO_SAFETY) -> np.ndarray:
    """ESO parameters of ``S^{1/2} A (T^{-1} - L I)^{-1/2}`` for serial sampling.

    For serial sampling ``E||sum_{i in S} C_i^T z_i||^2 = sum_i p_i
    ||C_i^T z_i||^2``, so ``v_i = ||C_i||^2`` is tight. The power-method
    estimate is inflated by ``safety`` to guard against its downward bias.
    """
    S = np.asarray(S, dtype=float)
    if S.shape != (A.n,) or np.any(S <= 0):
        raise ValueError("S must hold one positive scalar per block")
    scale = 1.0 / np.sqrt(_reduced_metric(T, L, A.domain_dim))
    v = np.empty(A.n)
    for i in range(A.n):
        blk = A.block_operator(i)
        c_i = LinearOperator(
            blk.shape,
            matvec=lambda x, blk=blk: blk.matvec(scale * x),
            rmatvec=lambda z, blk=blk: scale * blk.rmatvec(z),
            dtype=float)
        v[i] = S[i] * power_method_norm(c_i, tol=tol, max_iter=5000, seed=seed) ** 2
    return safety * v


def default_step_rule(block_norms: Sequence[float], probs: Sequence[float],
                      L: float, gamma: float = 0.99,
                      A: Optional[BlockLinearOperator] = None,
                      max_retries: int = 20, rho: float = 1.0,
                      strict: bool = True) -> StepSizes:
    """Scalar primal step and per-block dual steps certified by ESO.

    ``S_i = gamma rho p_i / ||A_i||`` and ``T = tau I`` with
    ``tau = gamma / (gamma L + rho max_i ||A_i||)``. The ESO parameters are
    recomputed (by power method on ``A`` if given, otherwise in closed form
    from ``block_norms``) and ``tau`` is shrunk by 0.9 until ``v_i < p_i``.

    Parameters
    ----------
    rho : float
        Dual/primal balance. ``rho = 1 / min_i p_i`` gives the usual
        stochastic PDHG choice ``S_i = gamma / ||A_i||`` under uniform
        sampling; ``rho`` leaves ``v_i`` unchanged when ``L = 0``.
    strict : bool
        If False, return the last (uncertified) candidate with
        ``valid=False`` instead of raising.
    """
    norms = np.asarray(block_norms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(~(norms > 0)):
        raise ValueError("block norms must be strictly positive")
    if gamma <= 0 or rho <= 0:
        raise ValueError("gamma and rho must be positive")
    S = gamma * rho * probs / norms
    tau = gamma / (gamma * L + rho * norms.max())
    dim = 1 if A is None else A.domain_dim
    v = np.full(norms.shape, np.inf)
    for attempt in range(max_retries + 1):
        if attempt:
            tau *= 0.9
        if L * tau < 1:
            if A is None:
                v = ESO_SAFETY * S * norms ** 2 / (1.0 / tau - L)
            else:
                v = eso_params_serial(A, S, tau, L)
            if np.all(v < probs):
                return StepSizes(T=np.full(dim, tau), S=S, theta=1.0,
                                 lipschitz=L, eso_v=v, valid=True)
    if not strict:
        return StepSizes(T=np.full(dim, tau), S=S, theta=1.0, lipschitz=L,
                         eso_v=v, valid=False)
    raise StepSizeError(
        f"could not certify step sizes after {max_retries} retries "
        f"(max v_i/p_i = {np.max(v / probs):.4g})", v, probs)


def validate_step_sizes(steps: StepSizes, probs: Sequence[float]):
    """Return ``(ok, report)``; ``ok`` iff ``v_i < p_i`` for all ``i`` and
    ``T^{-1} - L I`` is positive definite."""
    if steps.eso_v is None:
        raise ValueError("eso_v not populated")
    probs = np.asarray(probs, dtype=float)
    v = np.asarray(steps.eso_v, dtype=float)
    metric_ok = bool(np.all(1.0 / np.asarray(steps.T) - steps.lipschitz > 0))
    report = StepReport(probs=probs, eso_v=v, metric_ok=metric_ok)
    ok = metric_ok and bool(np.all(v < probs))
    return ok, report
