"""Block-partitioned linear operators, norm estimation and 2D finite differences.

A dual variable is represented as a plain list of 1D numpy arrays, one per
block. Operators are immutable after construction.
"""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

__all__ = [
    "BlockLinearOperator",
    "FiniteDifference2D",
    "as_metric",
    "block_inner",
    "block_sqnorm",
    "block_zeros",
    "finite_difference_2d",
    "finite_difference_2d_adjoint",
    "power_method_norm",
    "read_triplets",
    "write_triplets",
]


class BlockLinearOperator:
    """Linear map ``A`` with rows split into blocks, ``(Ax)_i = A_i x``.

    Each block is either a scipy sparse matrix or dense array (matrix backend)
    or a ``scipy.sparse.linalg.LinearOperator`` exposing ``matvec`` and
    ``rmatvec`` (procedural backend).
    """

    def __init__(self, blocks: Sequence):
        if len(blocks) < 1:
            raise ValueError("need at least one block")
        self._fwd = []
        self._adj = []
        dims = []
        domain = None
        for blk in blocks:
            if isinstance(blk, LinearOperator):
                fwd, adj = blk.matvec, blk.rmatvec
                shape = blk.shape
            elif sp.issparse(blk):
                mat = sp.csr_matrix(blk, dtype=float)
                fwd = mat.dot
                adj = sp.csr_matrix(mat.T).dot
                shape = mat.shape
            else:
                # small dense blocks: numpy beats sparse dispatch overhead
                mat = np.array(blk, dtype=float, ndmin=2)
                fwd = mat.dot
                adj = np.ascontiguousarray(mat.T).dot
                shape = mat.shape
            if domain is None:
                domain = shape[1]
            elif shape[1] != domain:
                raise ValueError(
                    f"block domain dims disagree: {shape[1]} vs {domain}")
            self._fwd.append(fwd)
            self._adj.append(adj)
            dims.append(int(shape[0]))
        self.blocks = tuple(blocks)
        self.domain_dim = int(domain)
        self.block_dims = tuple(dims)
        edges = np.concatenate([[0], np.cumsum(dims)])
        self._slices = [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
        # one stacked product for full applies when every block is explicit
        self._stacked = None
        if not any(isinstance(b, LinearOperator) for b in blocks):
            if all(sp.issparse(b) for b in blocks):
                full = sp.vstack(blocks, format="csr", dtype=float)
                self._stacked = (full.dot, sp.csr_matrix(full.T).dot)
            else:
                full = np.vstack([b.toarray() if sp.issparse(b) else b
                                  for b in blocks]).astype(float)
                self._stacked = (full.dot, np.ascontiguousarray(full.T).dot)

    @property
    def n(self) -> int:
        return len(self.block_dims)

    @property
    def range_dim(self) -> int:
        return sum(self.block_dims)

    @classmethod
    def from_matrix(cls, matrix, block_dims: Optional[Sequence[int]] = None):
        """Split the rows of ``matrix`` into consecutive blocks."""
        mat = sp.csr_matrix(matrix, dtype=float)
        if block_dims is None:
            block_dims = [mat.shape[0]]
        if sum(block_dims) != mat.shape[0]:
            raise ValueError(
                f"block dims sum to {sum(block_dims)}, matrix has "
                f"{mat.shape[0]} rows")
        edges = np.concatenate([[0], np.cumsum(block_dims)])
        return cls([mat[edges[i]:edges[i + 1]] for i in range(len(block_dims))])

    @classmethod
    def identity(cls, dim: int):
        return cls([sp.identity(dim, format="csr")])

    @classmethod
    def zero(cls, dim: int, block_dims: Sequence[int]):
        return cls([sp.csr_matrix((m, dim)) for m in block_dims])

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.domain_dim,):
            raise ValueError(
                f"dimension mismatch: operator domain is {self.domain_dim}, "
                f"got vector of shape {x.shape}")
        return x

    def _check_block(self, i: int):
        if not 0 <= i < self.n:
            raise IndexError(f"block index {i} out of range for n={self.n}")

    def apply(self, x) -> list:
        x = self._check_x(x)
        if self._stacked is not None:
            full = np.asarray(self._stacked[0](x), dtype=float).ravel()
            return [full[sl] for sl in self._slices]
        return [np.asarray(f(x), dtype=float).ravel() for f in self._fwd]

    def apply_block(self, i: int, x) -> np.ndarray:
        self._check_block(i)
        return np.asarray(self._fwd[i](self._check_x(x)), dtype=float).ravel()

    def adjoint(self, y: Sequence) -> np.ndarray:
        if len(y) != self.n:
            raise ValueError(
                f"dimension mismatch: expected {self.n} dual blocks, got {len(y)}")
        if self._stacked is not None:
            for i, yi in enumerate(y):
                if np.shape(yi) != (self.block_dims[i],):
                    raise ValueError(
                        f"dimension mismatch: block {i} has dim "
                        f"{self.block_dims[i]}, got shape {np.shape(yi)}")
            return np.asarray(self._stacked[1](np.concatenate(y)),
                              dtype=float).ravel()
        out = np.zeros(self.domain_dim)
        for i, yi in enumerate(y):
            out += self.adjoint_block(i, yi)
        return out

    def adjoint_block(self, i: int, yi) -> np.ndarray:
        self._check_block(i)
        yi = np.asarray(yi, dtype=float)
        if yi.shape != (self.block_dims[i],):
            raise ValueError(
                f"dimension mismatch: block {i} has dim {self.block_dims[i]}, "
                f"got shape {yi.shape}")
        return np.asarray(self._adj[i](yi), dtype=float).ravel()

    def block_operator(self, i: int) -> LinearOperator:
        self._check_block(i)
        return LinearOperator((self.block_dims[i], self.domain_dim),
                              matvec=self._fwd[i], rmatvec=self._adj[i],
                              dtype=float)

    def as_linear_operator(self) -> LinearOperator:
        def matvec(x):
            return np.concatenate(self.apply(np.ravel(x)))

        def rmatvec(y):
            return self.adjoint(self.split(np.ravel(y)))

        return LinearOperator((self.range_dim, self.domain_dim),
                              matvec=matvec, rmatvec=rmatvec, dtype=float)

    def split(self, y_flat) -> list:
        y_flat = np.asarray(y_flat, dtype=float)
        if y_flat.shape != (self.range_dim,):
            raise ValueError(
                f"dimension mismatch: expected {self.range_dim}, got {y_flat.shape}")
        edges = np.cumsum(self.block_dims)[:-1]
        return [b.copy() for b in np.split(y_flat, edges)]

    def block_norms(self, tol: float = 1e-8, max_iter: int = 1000,
                    seed: int = 0) -> np.ndarray:
        return np.array([power_method_norm(self.block_operator(i), tol=tol,
                                           max_iter=max_iter, seed=seed)
                         for i in range(self.n)])

    def norm(self, tol: float = 1e-8, max_iter: int = 1000, seed: int = 0) -> float:
        return power_method_norm(self.as_linear_operator(), tol=tol,
                                 max_iter=max_iter, seed=seed)

    def to_dense(self) -> np.ndarray:
        eye = np.eye(self.domain_dim)
        return np.column_stack([np.concatenate(self.apply(e)) for e in eye])


def block_zeros(block_dims: Sequence[int]) -> list:
    return [np.zeros(m) for m in block_dims]


def block_inner(a: Sequence, b: Sequence) -> float:
    return float(sum(np.dot(ai, bi) for ai, bi in zip(a, b)))


def block_sqnorm(a: Sequence, weights=None) -> float:
    """Sum of ``w_i * ||a_i||^2``; ``weights`` defaults to ones."""
    if weights is None:
        weights = np.ones(len(a))
    return float(sum(w * np.dot(ai, ai) for w, ai in zip(weights, a)))


def as_metric(diag, dim: int) -> np.ndarray:
    """Broadcast a scalar or vector diagonal metric to length ``dim``."""
    arr = np.broadcast_to(np.asarray(diag, dtype=float), (dim,)).copy()
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ValueError("diagonal metric must be finite and strictly positive")
    return arr


def power_method_norm(op, tol: float = 1e-8, max_iter: int = 1000,
                      seed: int = 0, full_output: bool = False):
    """Estimate the largest singular value of ``op`` by power iteration on
    ``op^T op``.

    The start vector is drawn from ``numpy.random.default_rng(seed)``. The
    estimate is a Rayleigh quotient and therefore never exceeds the true norm
    (up to rounding). If the relative change stays above ``tol`` after
    ``max_iter`` iterations a ``RuntimeWarning`` is emitted and the best
    estimate is returned.

    With ``full_output=True`` returns ``(norm, converged, history)`` where
    ``history`` holds the squared-norm Rayleigh quotients per iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op = aslinearoperator(op)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.shape[1])
    x /= np.linalg.norm(x)
    history = []
    est = 0.0
    converged = False
    for _ in range(max_iter):
        ax = op.matvec(x)
        rq = float(np.dot(ax, ax))
        history.append(rq)
        new = np.sqrt(rq)
        if new == 0.0:
            est, converged = 0.0, True
            break
        if abs(new - est) <= tol * new:
            est, converged = new, True
            break
        est = new
        x = op.rmatvec(ax)
        x /= np.linalg.norm(x)
    if not converged:
        warnings.warn(f"power method did not reach tol={tol:g} in {max_iter} "
                      "iterations", RuntimeWarning, stacklevel=2)
    if full_output:
        return est, converged, np.array(history)
    return est


def _check_image(image, height: int, width: int) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.size != height * width:
        raise ValueError(
            f"shape mismatch: image has {image.size} entries, expected "
            f"{height}x{width}={height * width}")
    return image.reshape(height, width)


def finite_difference_2d(image, height: int, width: int) -> np.ndarray:
    """Forward differences, horizontal block first then vertical.

    Neumann boundary: the difference past the last column (row) is zero.
    Output length is ``2 * height * width``.
    """
    u = _check_image(image, height, width)
    dh = np.zeros_like(u)
    dv = np.zeros_like(u)
    dh[:, :-1] = u[:, 1:] - u[:, :-1]
    dv[:-1, :] = u[1:, :] - u[:-1, :]
    return np.concatenate([dh.ravel(), dv.ravel()])


def finite_difference_2d_adjoint(p, height: int, width: int) -> np.ndarray:
    """Adjoint of :func:`finite_difference_2d` (negative divergence)."""
    p = np.asarray(p, dtype=float)
    size = height * width
    if p.size != 2 * size:
        raise ValueError(
            f"shape mismatch: expected {2 * size} entries, got {p.size}")
    ph = p[:size].reshape(height, width)
    pv = p[size:].reshape(height, width)
    out = np.zeros((height, width))
    out[:, :-1] -= ph[:, :-1]
    out[:, 1:] += ph[:, :-1]
    out[:-1, :] -= pv[:-1, :]
    out[1:, :] += pv[:-1, :]
    return out.ravel()


class FiniteDifference2D(LinearOperator):
    """Procedural operator wrapping :func:`finite_difference_2d`."""

    def __init__(self, height: int, width: int):
        self.height = height
        self.width = width
        super().__init__(dtype=np.dtype(float),
                         shape=(2 * height * width, height * width))

    def _matvec(self, x):
        return finite_difference_2d(x, self.height, self.width)

    def _rmatvec(self, p):
        return finite_difference_2d_adjoint(p, self.height, self.width)

    def _adjoint(self):
        return LinearOperator(self.shape[::-1], matvec=self._rmatvec,
                              rmatvec=self._matvec, dtype=float)


def read_triplets(path) -> sp.csr_matrix:
    """Read a sparse matrix from ``rows cols nnz`` header plus ``i j value``
    lines (0-indexed)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: bad header, expected 'rows cols nnz'")
        rows, cols, nnz = (int(v) for v in header)
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"{path}: header says {nnz} entries, found {data.shape[0]}")
    i = data[:, 0].astype(int)
    j = data[:, 1].astype(int)
    if nnz and (i.min() < 0 or i.max() >= rows or j.min() < 0 or j.max() >= cols):
        raise ValueError(f"{path}: index out of bounds for {rows}x{cols}")
    return sp.csr_matrix((data[:, 2], (i, j)), shape=(rows, cols))


def write_triplets(path, matrix) -> None:
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")

