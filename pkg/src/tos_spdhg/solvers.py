"""Stochastic and deterministic primal-dual solvers for

    min_x max_y  h(x) + g(x) + sum_i <A_i x, y_i> - f_i^*(y_i)

``tos_spdhg`` is the three-operator stochastic method, ``spdhg`` its
``h = 0`` special case (same code path), and ``condat_vu`` the deterministic
baseline that updates every dual block each iteration.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .functions import ZeroSmooth
from .linalg import BlockLinearOperator, as_metric, block_zeros
from .sampling import Sampler, StepSizeError, StepSizes, validate_step_sizes

__all__ = [
    "Checkpoint",
    "DivergenceError",
    "RunRecord",
    "SaddleProblem",
    "SolverState",
    "condat_vu",
    "condat_vu_steps",
    "deterministic_step_residual",
    "spdhg",
    "tos_spdhg",
]

Z_DRIFT_TOL = 1e-8


class DivergenceError(FloatingPointError):
    def __init__(self, iteration, block=None):
        where = "primal variable" if block is None else f"dual block {block}"
        super().__init__(f"non-finite value in {where} at iteration {iteration}")
        self.iteration = iteration
        self.block = block


@dataclass(eq=False)
class SaddleProblem:
    A: BlockLinearOperator
    f_blocks: list
    g: object
    h: object = field(default_factory=ZeroSmooth)

    def __post_init__(self):
        if len(self.f_blocks) != self.A.n:
            raise ValueError(
                f"{len(self.f_blocks)} data-fit blocks for an operator with "
                f"{self.A.n} blocks")
        for i, (f, m) in enumerate(zip(self.f_blocks, self.A.block_dims)):
            if f.dim != m:
                raise ValueError(f"block {i}: data dim {f.dim} != operator dim {m}")
        self._L = None

    @property
    def n(self) -> int:
        return self.A.n

    @property
    def dim(self) -> int:
        return self.A.domain_dim

    @property
    def lipschitz(self) -> float:
        if self._L is None:
            self._L = float(self.h.lipschitz())
        return self._L

    def objective(self, x) -> float:
        """Primal objective ``sum_i f_i(A_i x) + g(x) + h(x)``."""
        ax = self.A.apply(x)
        return (sum(f(a) for f, a in zip(self.f_blocks, ax))
                + self.g(x) + self.h(x))


@dataclass
class SolverState:
    x: np.ndarray
    x_prev: np.ndarray
    y: List[np.ndarray]
    z: np.ndarray            # A^T y
    zbar: np.ndarray         # A^T ybar
    k: int = 0
    x_sum: Optional[np.ndarray] = None
    y_sum: Optional[List[np.ndarray]] = None
    y_stamp: Optional[np.ndarray] = None
    z_drift: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.x_sum is None:
            self.x_sum = np.zeros_like(self.x)
        if self.y_sum is None:
            self.y_sum = [np.zeros_like(b) for b in self.y]
        if self.y_stamp is None:
            self.y_stamp = np.zeros(len(self.y), dtype=np.int64)

    def _flush(self, i):
        gap = self.k - self.y_stamp[i]
        if gap:
            self.y_sum[i] += gap * self.y[i]
            self.y_stamp[i] = self.k

    def ergodic(self):
        """Return ``(x_avg, y_avg)``, the means of iterates ``1..k``."""
        for i in range(len(self.y)):
            self._flush(i)
        if self.k == 0:
            return self.x.copy(), [b.copy() for b in self.y]
        return self.x_sum / self.k, [s / self.k for s in self.y_sum]


@dataclass(frozen=True)
class Checkpoint:
    """Read-only snapshot handed to checkpoint hooks."""

    k: int
    epoch: float
    x: np.ndarray
    y: List[np.ndarray]
    x_avg: np.ndarray
    y_avg: List[np.ndarray]


def _readonly(a):
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass
class RunRecord:
    algorithm: str
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    rows: List[dict] = field(default_factory=list)

    def append(self, row: dict):
        if self.rows and row["k"] <= self.rows[-1]["k"]:
            raise ValueError("checkpoint iterations must increase strictly")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


def _schedule(K, checkpoints, checkpoint_every, epoch_length):
    if checkpoints is not None:
        pts = sorted({int(c) for c in checkpoints if 0 < c <= K})
    elif checkpoint_every:
        step = int(checkpoint_every * epoch_length)
        pts = list(range(step, K + 1, step))
    else:
        pts = []
    return pts


class _Monitor:
    def __init__(self, record, hook, epoch_length, points):
        self.record = record
        self.hook = hook
        self.epoch_length = epoch_length
        self.points = points
        self.pos = 0
        self.solver_seconds = 0.0
        self.t0 = time.perf_counter()

    def next_stop(self):
        return self.points[self.pos] if self.pos < len(self.points) else None

    def __call__(self, state):
        self.solver_seconds += time.perf_counter() - self.t0
        epoch = state.k / self.epoch_length
        row = {"epoch": epoch, "k": state.k, "seconds": self.solver_seconds}
        if self.hook is not None:
            x_avg, y_avg = state.ergodic()
            view = Checkpoint(
                k=state.k, epoch=epoch, x=_readonly(state.x),
                y=[_readonly(b) for b in state.y], x_avg=_readonly(x_avg),
                y_avg=[_readonly(b) for b in y_avg])
            extra = self.hook(view)
            if extra:
                row.update(extra)
        self.record.append(row)
        self.pos += 1
        self.t0 = time.perf_counter()


def _initial_state(problem, x0, y0, seed):
    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    y = (block_zeros(problem.A.block_dims) if y0 is None
         else [np.array(b, dtype=float) for b in y0])
    z = problem.A.adjoint(y) if y0 is not None else np.zeros(problem.dim)
    return SolverState(x=x, x_prev=x.copy(), y=y, z=z, zbar=z.copy(), seed=seed)


def tos_spdhg(problem: SaddleProblem, steps: StepSizes, sampler: Sampler, K: int,
              hook: Optional[Callable] = None, checkpoint_every: Optional[float] = None,
              checkpoints: Optional[Sequence[int]] = None, x0=None, y0=None,
              unsafe: bool = False, verify_z: bool = True, state: SolverState = None):
    """Run ``K`` iterations of stochastic primal-dual three-operator splitting.

    Each iteration performs::

        x+    = prox_g^T(x - T (A^T ybar + grad h(x)))
        j     ~ sampler
        y+_j  = prox_{f_j^*}^{S_j}(y_j + S_j A_j x+)      (other blocks kept)
        ybar+ = y+ + theta Q (y+ - y),   Q = diag(1 / p_i)

    ``ybar`` is never formed: ``z = A^T y`` and ``A^T ybar`` are updated from
    ``A_j^T (y+_j - y_j)``, so one block forward and one block adjoint are
    applied per iteration.

    Parameters
    ----------
    problem : SaddleProblem
    steps : StepSizes
        Must be certified (``steps.valid``) with ``theta == 1`` unless
        ``unsafe`` is set.
    sampler : Sampler
        Serial sampler over ``problem.n`` blocks; consumed by the run.
    K : int
        Number of iterations.
    hook : callable, optional
        Called as ``hook(checkpoint)`` at each checkpoint with a read-only
        :class:`Checkpoint`; a returned dict is merged into the record row.
    checkpoint_every : float, optional
        Checkpoint cadence in epochs (``n`` iterations per epoch).
    checkpoints : sequence of int, optional
        Explicit iteration counts to checkpoint at; overrides
        ``checkpoint_every``.
    x0, y0 : optional
        Warm start; defaults to zeros.
    unsafe : bool
        Skip step-size certification.
    verify_z : bool
        Recompute ``A^T y`` once per epoch and compare against the
        incrementally maintained copy. Drift above 1e-8 (relative) triggers a
        warning and resynchronization.
    state : SolverState, optional
        Resume from an existing state (``x0``/``y0`` ignored).

    Returns
    -------
    state : SolverState
    record : RunRecord
    """
    A = problem.A
    n = problem.n
    if sampler.n != n:
        raise ValueError(f"sampler has {sampler.n} blocks, problem has {n}")
    if not unsafe:
        if steps.theta != 1.0:
            raise StepSizeError("theta != 1 is only allowed with the unsafe override")
        if steps.eso_v is None:
            raise StepSizeError("step sizes carry no ESO certificate")
        ok, report = validate_step_sizes(steps, sampler.probs)
        if not ok:
            raise StepSizeError("step sizes fail the ESO condition v_i < p_i",
                                report.eso_v, report.probs)
        if steps.lipschitz < problem.lipschitz:
            raise StepSizeError(
                f"step sizes certified for L={steps.lipschitz:g} but the smooth "
                f"term has L={problem.lipschitz:g}")

    T = as_metric(steps.T, problem.dim)
    S = np.asarray(steps.S, dtype=float)
    theta = float(steps.theta)
    inv_p = 1.0 / sampler.probs
    g, h, fs = problem.g, problem.h, problem.f_blocks

    if state is None:
        state = _initial_state(problem, x0, y0, sampler.seed)
    record = RunRecord("tos-spdhg", seed=sampler.seed)
    points = [p + state.k for p in _schedule(K, checkpoints, checkpoint_every, n)]
    monitor = _Monitor(record, hook, n, points)
    stop = monitor.next_stop()
    k_end = state.k + K

    x, y, z, zbar = state.x, state.y, state.z, state.zbar
    x_prev = state.x_prev
    while state.k < k_end:
        x_prev[:] = x
        x[:] = g.prox(x_prev - T * (zbar + h.grad(x_prev)), T)
        if not np.isfinite(x).all():
            raise DivergenceError(state.k + 1)

        j = sampler.draw()
        yj = y[j]
        yj_new = fs[j].conj_prox(yj + S[j] * A.apply_block(j, x), S[j])
        dy = yj_new - yj
        if not np.isfinite(dy).all():
            raise DivergenceError(state.k + 1, j)
        state._flush(j)
        y[j] = yj_new
        dz = A.adjoint_block(j, dy)
        z += dz
        np.add(z, (theta * inv_p[j]) * dz, out=zbar)

        state.k += 1
        state.x_sum += x

        if verify_z and state.k % n == 0:
            _check_z(state, A)
        if stop is not None and state.k == stop:
            monitor(state)
            stop = monitor.next_stop()
    return state, record


def _check_z(state, A):
    fresh = A.adjoint(state.y)
    ref = np.linalg.norm(fresh)
    drift = np.linalg.norm(state.z - fresh)
    if ref > 0:
        drift /= ref
    state.z_drift = max(state.z_drift, drift)
    if drift > Z_DRIFT_TOL:
        warnings.warn(f"A^T y drifted by {drift:.3g} (relative); resynchronizing",
                      RuntimeWarning, stacklevel=3)
        corr = fresh - state.z
        state.z += corr
        state.zbar += corr


def spdhg(problem: SaddleProblem, steps: StepSizes, sampler: Sampler, K: int,
          **kwargs):
    """Stochastic PDHG: :func:`tos_spdhg` on a problem without smooth term."""
    if not getattr(problem.h, "is_zero", False):
        raise ValueError("spdhg requires a problem whose smooth term is zero")
    plain = replace(problem, h=ZeroSmooth())
    state, record = tos_spdhg(plain, steps, sampler, K, **kwargs)
    record.algorithm = "spdhg"
    return state, record


def condat_vu_steps(problem: SaddleProblem, gamma: float = 0.99,
                    op_norm: Optional[float] = None, rho: float = 1.0):
    """Return ``(tau, sigma)`` with ``sigma = gamma rho / ||A||`` and
    ``tau = gamma / (gamma L + rho ||A||)``.

    Any ``rho > 0`` and ``gamma < 1`` satisfy ``1/tau - sigma ||A||^2 >= L/2``.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if op_norm is None:
        op_norm = problem.A.norm()
    L = problem.lipschitz
    return gamma / (gamma * L + rho * op_norm), gamma * rho / op_norm


def condat_vu(problem: SaddleProblem, tau, sigma, K: int,
              hook: Optional[Callable] = None, checkpoint_every: Optional[float] = None,
              checkpoints: Optional[Sequence[int]] = None, x0=None, y0=None,
              unsafe: bool = False, op_norm: Optional[float] = None,
              extrapolation: str = "dual", state: SolverState = None):
    """Deterministic primal-dual splitting with a full dual update.

    With ``extrapolation="dual"`` (default)::

        x+ = prox_g^tau(x - tau (A^T (2 y - y_prev) + grad h(x)))
        y+ = prox_{f^*}^sigma(y + sigma A x+)

    which is the ``n = 1`` instance of :func:`tos_spdhg` with ``theta = 1``.
    ``extrapolation="primal"`` runs the variant::

        x+ = prox_g^tau(x - tau (A^T y + grad h(x)))
        y+ = prox_{f^*}^sigma(y + sigma A (2 x+ - x))

    Both require ``1/tau - sigma ||A||^2 >= L/2``; this is checked with a
    power-method estimate of ``||A||`` unless ``unsafe`` is set. ``tau`` may be
    a scalar or a diagonal; ``sigma`` a scalar or one value per block.
    Returns ``(state, record)`` like :func:`tos_spdhg`; one iteration is one
    epoch.
    """
    if extrapolation not in ("dual", "primal"):
        raise ValueError(f"unknown extrapolation {extrapolation!r}")
    A = problem.A
    T = as_metric(tau, problem.dim)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (A.n,)).copy()
    if np.any(sig <= 0):
        raise ValueError("sigma must be positive")
    if not unsafe:
        if op_norm is None:
            op_norm = A.norm()
        margin = 1.0 / T.max() - sig.max() * op_norm ** 2 - problem.lipschitz / 2
        if margin < 0:
            raise StepSizeError(
                f"Condat-Vu step condition 1/tau - sigma*||A||^2 >= L/2 "
                f"violated by {-margin:.3g}")

    g, h, fs = problem.g, problem.h, problem.f_blocks
    if state is None:
        state = _initial_state(problem, x0, y0, None)
    record = RunRecord("condat-vu")
    points = [p + state.k for p in _schedule(K, checkpoints, checkpoint_every, 1)]
    monitor = _Monitor(record, hook, 1, points)
    stop = monitor.next_stop()
    k_end = state.k + K

    x, x_prev, y = state.x, state.x_prev, state.y
    while state.k < k_end:
        x_prev[:] = x
        if extrapolation == "dual":
            x[:] = g.prox(x_prev - T * (state.zbar + h.grad(x_prev)), T)
            probe = x
        else:
            x[:] = g.prox(x_prev - T * (state.z + h.grad(x_prev)), T)
            probe = 2.0 * x - x_prev
        if not np.isfinite(x).all():
            raise DivergenceError(state.k + 1)
        ax = A.apply(probe)
        for i, f in enumerate(fs):
            y[i] = f.conj_prox(y[i] + sig[i] * ax[i], sig[i])
            if not np.isfinite(y[i]).all():
                raise DivergenceError(state.k + 1, i)
        z_prev = state.z
        state.z = A.adjoint(y)
        state.zbar = 2.0 * state.z - z_prev

        state.k += 1
        state.x_sum += x
        for i in range(A.n):
            state.y_sum[i] += y[i]
        state.y_stamp[:] = state.k
        if stop is not None and state.k == stop:
            monitor(state)
            stop = monitor.next_stop()
    return state, record


def deterministic_step_residual(problem: SaddleProblem, steps: StepSizes, x_k, y_k,
                                ybar_k, x, y, lipschitz: Optional[float] = None) -> float:
    """Residual of the one-step energy inequality for a full (all-block)
    deterministic update from ``(x_k, y_k)`` with extrapolated dual ``ybar_k``,
    tested at the point ``(x, y)``.

    With ``x+ = prox_g^T(x_k - T(A^T ybar_k + grad h(x_k)))`` and
    ``yh_i = prox_{f_i^*}^{S_i}(y_k_i + S_i A_i x+)`` the inequality reads::

        ||x_k - x||^2_{T^-1} + ||y_k - y||^2_{S^-1}
          >= ||x+ - x||^2_{T^-1} + ||yh - y||^2_{S^-1} + 2 H((x+, yh) | (x, y))
             - 2 <A(x+ - x), yh - ybar_k>
             + ||x+ - x_k||^2_{T^-1 - L I} + ||yh - y_k||^2_{S^-1}

    where ``H(w|w') = g(x)+h(x)-g(x')-h(x') + <A^T y', x - x'>
    + sum_i f_i^*(y_i) - f_i^*(y'_i) - <A_i x', y_i - y'_i>``.
    Returns left minus right, which is nonnegative whenever ``h`` is convex
    with ``L``-Lipschitz gradient (``L`` defaults to ``problem.lipschitz``).
    """
    A, g, h, fs = problem.A, problem.g, problem.h, problem.f_blocks
    L = problem.lipschitz if lipschitz is None else lipschitz
    T = as_metric(steps.T, problem.dim)
    S = np.asarray(steps.S, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    x = np.asarray(x, dtype=float)

    x_new = g.prox(x_k - T * (A.adjoint(ybar_k) + h.grad(x_k)), T)
    ax_new = A.apply(x_new)
    y_hat = [f.conj_prox(yk + s * a, s) for f, yk, s, a in zip(fs, y_k, S, ax_new)]

    def tnorm(v, metric):
        return float(np.dot(v * metric, v))

    def snorm(blocks):
        return float(sum(np.dot(b, b) / s for b, s in zip(blocks, S)))

    def diff(a, b):
        return [ai - bi for ai, bi in zip(a, b)]

    ax = A.apply(x)
    dx = x_new - x
    adx = A.apply(dx)
    H = (g(x_new) + h(x_new) - g(x) - h(x) + float(np.dot(A.adjoint(y), dx)))
    for f, yh, yi, axi in zip(fs, y_hat, y, ax):
        H += f.conj(yh) - f.conj(yi) - float(np.dot(axi, yh - yi))

    lhs = tnorm(x_k - x, 1.0 / T) + snorm(diff(y_k, y))
    cross = sum(float(np.dot(a, yh - yb)) for a, yh, yb in zip(adx, y_hat, ybar_k))
    step = x_new - x_k
    rhs = (tnorm(dx, 1.0 / T) + snorm(diff(y_hat, y)) + 2.0 * H - 2.0 * cross
           + tnorm(step, 1.0 / T - L) + snorm(diff(y_hat, y_k)))
    return lhs - rhs
