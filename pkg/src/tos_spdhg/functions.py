"""Convex functions used by the three-composite saddle problem.

Three roles:

* proxable primal terms ``g`` (:class:`BoxIndicator`, :class:`ZeroFunction`)
  with ``prox(x, T)`` minimizing ``0.5 * ||z - x||^2_{T^{-1}} + g(z)``;
* dual data-fit blocks ``f_i`` (:class:`SquaredL2`, :class:`KullbackLeibler`)
  exposing ``conj(y)`` and the closed-form ``conj_prox(y, sigma)`` of
  ``sigma * f_i^*``;
* smooth terms ``h`` (:class:`EdgePreserving`, :class:`Quadratic`,
  :class:`ZeroSmooth`) exposing ``grad`` and ``lipschitz``.

All records are immutable; every method is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .linalg import finite_difference_2d, finite_difference_2d_adjoint

__all__ = [
    "BoxIndicator",
    "EdgePreserving",
    "KullbackLeibler",
    "Quadratic",
    "SquaredL2",
    "ZeroFunction",
    "ZeroSmooth",
    "make_proxable",
    "make_smooth",
]

FD_NORM_SQ_BOUND = 8.0


def _finite(a, what="input"):
    a = np.asarray(a, dtype=float)
    if not np.isfinite(a).all():
        raise ValueError(f"non-finite {what}")
    return a


# --- proxable terms -------------------------------------------------------

@dataclass(frozen=True)
class BoxIndicator:
    """Indicator of ``[lo, hi]`` componentwise."""

    lo: float = 0.0
    hi: float = 1.0
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty box [{self.lo}, {self.hi}]")

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.0 if np.all((x >= self.lo) & (x <= self.hi)) else np.inf

    def prox(self, x, T=None) -> np.ndarray:
        # projection onto a box is separable, so the diagonal metric drops out
        return np.clip(x, self.lo, self.hi)


@dataclass(frozen=True)
class ZeroFunction:
    kind: str = field(default="zero", init=False)

    def __call__(self, x) -> float:
        return 0.0

    def prox(self, x, T=None) -> np.ndarray:
        return np.array(x, dtype=float)


def make_proxable(kind: str, **params):
    if kind == "box":
        return BoxIndicator(**params)
    if kind == "zero":
        return ZeroFunction(**params)
    raise ValueError(f"unsupported proxable function kind {kind!r}")


# --- dual data-fit blocks -------------------------------------------------

@dataclass(frozen=True, eq=False)
class SquaredL2:
    """``f(z) = 0.5 * ||z - b||^2``."""

    b: np.ndarray
    kind: str = field(default="squared-l2", init=False)

    def __post_init__(self):
        object.__setattr__(self, "b", _finite(self.b, "data").copy())

    @property
    def dim(self) -> int:
        return self.b.size

    def __call__(self, z) -> float:
        r = np.asarray(z, dtype=float) - self.b
        return 0.5 * float(np.dot(r, r))

    def conj(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return 0.5 * float(np.dot(y, y)) + float(np.dot(self.b, y))

    def conj_prox(self, y, sigma) -> np.ndarray:
        y = _finite(y)
        return (y - sigma * self.b) / (1.0 + sigma)


@dataclass(frozen=True, eq=False)
class KullbackLeibler:
    """``f(z) = sum_j (z_j + r_j) - b_j + b_j log(b_j / (z_j + r_j))``.

    ``b >= 0`` are the data, ``r >= 0`` an optional background. Uses
    ``0 log 0 = 0``; the value is ``+inf`` where ``z_j + r_j <= 0`` and
    ``b_j > 0`` (or ``z_j + r_j < 0``).

    The conjugate is ``f^*(y) = sum_j -b_j log(1 - y_j) - r_j y_j`` on
    ``y < 1`` (``y <= 1`` where ``b_j = 0``), so ``f^*(0) = 0``.
    """

    b: np.ndarray
    background: Optional[np.ndarray] = None
    kind: str = field(default="kl", init=False)

    def __post_init__(self):
        b = _finite(self.b, "data").copy()
        if np.any(b < 0):
            raise ValueError("KL data must be nonnegative")
        object.__setattr__(self, "b", b)
        r = np.zeros_like(b) if self.background is None else np.broadcast_to(
            _finite(self.background, "background"), b.shape).copy()
        if np.any(r < 0):
            raise ValueError("KL background must be nonnegative")
        object.__setattr__(self, "background", r)

    @property
    def dim(self) -> int:
        return self.b.size

    def __call__(self, z) -> float:
        u = np.asarray(z, dtype=float) + self.background
        b = self.b
        if np.any(u < 0) or np.any((u <= 0) & (b > 0)):
            return np.inf
        pos = b > 0
        val = np.sum(u) - np.sum(b)
        val += np.sum(b[pos] * np.log(b[pos] / u[pos]))
        return float(val)

    def conj(self, y) -> float:
        y = np.asarray(y, dtype=float)
        b = self.b
        pos = b > 0
        if np.any(y[pos] >= 1) or np.any(y[~pos] > 1):
            return np.inf
        return float(-np.sum(b[pos] * np.log1p(-y[pos]))
                     - np.dot(self.background, y))

    def conj_prox(self, y, sigma) -> np.ndarray:
        # 0.5 (1 + v - sqrt((v-1)^2 + 4 sigma b)), arranged to avoid cancellation
        d = _finite(y) + sigma * self.background - 1.0
        root = np.sqrt(d * d + 4.0 * sigma * self.b)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(d > 0, 1.0 - 2.0 * sigma * self.b / (d + root),
                           1.0 + 0.5 * (d - root))
        return out


# --- smooth terms ---------------------------------------------------------

@dataclass(frozen=True)
class ZeroSmooth:
    kind: str = field(default="zero", init=False)

    @property
    def is_zero(self) -> bool:
        return True

    def __call__(self, x) -> float:
        return 0.0

    def grad(self, x) -> np.ndarray:
        return np.zeros(np.shape(x))

    def lipschitz(self) -> float:
        return 0.0


@dataclass(frozen=True, eq=False)
class Quadratic:
    """``h(x) = 0.5 * mu * ||x - center||^2``."""

    mu: float
    center: Optional[np.ndarray] = None
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.mu == 0

    def _shift(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.center is None else x - self.center

    def __call__(self, x) -> float:
        r = self._shift(x)
        return 0.5 * self.mu * float(np.dot(r, r))

    def grad(self, x) -> np.ndarray:
        return self.mu * self._shift(x)

    def lipschitz(self) -> float:
        return float(self.mu)


@dataclass(frozen=True)
class EdgePreserving:
    """``h(x) = lam * sum_r phi([Dx]_r)`` with ``D`` the 2D forward
    difference operator and ``phi(z) = |z|^p / (1 + |z/c|^(p-q))``."""

    lam: float
    shape: Tuple[int, int]
    p: float = 2.0
    q: float = 1.5
    c: float = 10.0
    kind: str = field(default="edge-preserving", init=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.c <= 0:
            raise ValueError("c must be positive")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def is_zero(self) -> bool:
        return self.lam == 0

    def potential(self, z) -> np.ndarray:
        a = np.abs(z)
        return a ** self.p / (1.0 + (a / self.c) ** (self.p - self.q))

    def potential_deriv(self, z) -> np.ndarray:
        p, q = self.p, self.q
        a = np.abs(z)
        u = (a / self.c) ** (p - q)
        return np.sign(z) * a ** (p - 1) * (p + q * u) / (1.0 + u) ** 2

    def potential_deriv2(self, z) -> np.ndarray:
        p, q = self.p, self.q
        a = np.abs(z)
        u = (a / self.c) ** (p - q)
        num = (p - 1) * (p + q * u) * (1 + u) + (p - q) * u * (q - 2 * p - q * u)
        with np.errstate(divide="ignore"):
            return a ** (p - 2) * num / (1.0 + u) ** 3

    def _diff(self, x):
        return finite_difference_2d(x, *self.shape)

    def __call__(self, x) -> float:
        return self.lam * float(np.sum(self.potential(self._diff(x))))

    def grad(self, x) -> np.ndarray:
        if self.lam == 0:
            return np.zeros(np.size(x))
        w = self.potential_deriv(self._diff(x))
        return self.lam * finite_difference_2d_adjoint(w, *self.shape)

    def curvature_bound(self, n_grid: int = 200_001, safety: float = 1.1) -> float:
        """Grid estimate of ``sup |phi''|`` over ``[-10c, 10c]`` times
        ``safety``."""
        z = np.linspace(-10 * self.c, 10 * self.c, n_grid)
        return safety * float(np.max(np.abs(self.potential_deriv2(z))))

    def lipschitz(self) -> float:
        if self.lam == 0:
            return 0.0
        return self.lam * self.curvature_bound() * FD_NORM_SQ_BOUND


def make_smooth(kind: str, **params):
    if kind == "zero":
        return ZeroSmooth()
    if kind == "quadratic":
        return Quadratic(**params)
    if kind == "edge-preserving":
        return EdgePreserving(**params)
    raise ValueError(f"unsupported smooth function kind {kind!r}")
