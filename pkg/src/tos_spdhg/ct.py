"""Desk-scale parallel-beam CT problems.

The image lives on ``[-1, 1]^2`` (pixel size ``2 / max(height, width)``),
detector bins have the pixel size, and rays are traced with Joseph's method
(linear interpolation along the dominant axis). Projection angles are split
into ``n_subsets`` blocks round-robin: angle ``a`` goes to block
``a % n_subsets``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .functions import BoxIndicator, EdgePreserving, KullbackLeibler, SquaredL2
from .linalg import BlockLinearOperator
from .solvers import SaddleProblem

__all__ = [
    "DEFAULT_KL_OFFSET",
    "DEFAULT_LAMBDA",
    "MODALITIES",
    "Phantom",
    "Sinogram",
    "build_problem",
    "default_geometry",
    "load_phantom",
    "load_sinogram",
    "make_phantom",
    "make_radon_operator",
    "problem_from_data",
    "save_phantom",
    "save_sinogram",
    "simulate_measurements",
    "subset_angles",
]

MODALITIES = ("sparse-view", "low-dose")
DEFAULT_LAMBDA = 0.002

# modified Shepp-Logan: intensity, semi-axes a, b, centre x0, y0, rotation (deg)
_ELLIPSES = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]


@dataclass(eq=False)
class Phantom:
    image: np.ndarray
    height: int
    width: int


def _pixel_size(height, width):
    return 2.0 / max(height, width)


def _pixel_centres(height, width):
    px = _pixel_size(height, width)
    xs = (np.arange(width) - (width - 1) / 2) * px
    ys = ((height - 1) / 2 - np.arange(height)) * px
    return xs, ys


def make_phantom(height: int = 64, width: int = 64) -> Phantom:
    if height < 16 or width < 16:
        raise ValueError(f"phantom needs at least 16x16 pixels, got {height}x{width}")
    xs, ys = _pixel_centres(height, width)
    X, Y = np.meshgrid(xs, ys)
    img = np.zeros((height, width))
    for val, a, b, x0, y0, deg in _ELLIPSES:
        t = np.deg2rad(deg)
        dx, dy = X - x0, Y - y0
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    img = np.clip(img, 0.0, 1.0)
    return Phantom(img.ravel(), height, width)


def default_geometry(modality: str, width: int = 64):
    """``(n_angles, n_detectors, I0)`` defaults for a modality."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    n_angles, I0 = (60, 1e5) if modality == "sparse-view" else (180, 1e4)
    return n_angles, int(round(1.5 * width)), I0


def subset_angles(n_angles: int, n_subsets: int) -> List[np.ndarray]:
    if n_subsets < 1 or n_subsets > n_angles:
        raise ValueError(f"need 1 <= n_subsets <= n_angles, got {n_subsets}")
    return [np.arange(i, n_angles, n_subsets) for i in range(n_subsets)]


def _ray_weights(theta, height, width, n_detectors):
    """Joseph weights for one projection angle.

    Returns ``(detector, pixel, weight)`` triplets, pixel indices flattened
    row-major.
    """
    px = _pixel_size(height, width)
    s = (np.arange(n_detectors) - (n_detectors - 1) / 2) * px
    ux, uy = np.cos(theta), np.sin(theta)
    vx, vy = -uy, ux
    xs, ys = _pixel_centres(height, width)
    if abs(vy) >= abs(vx):
        # step through rows, interpolate between columns
        t = (ys[None, :] - s[:, None] * uy) / vy
        pos = (s[:, None] * ux + t * vx) / px + (width - 1) / 2
        lines = np.broadcast_to(np.arange(height), pos.shape)
        size, w = width, px / abs(vy)
    else:
        t = (xs[None, :] - s[:, None] * ux) / vx
        pos = (height - 1) / 2 - (s[:, None] * uy + t * vy) / px
        lines = np.broadcast_to(np.arange(width), pos.shape)
        size, w = height, px / abs(vx)
    det = np.broadcast_to(np.arange(n_detectors)[:, None], pos.shape)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    out_d, out_p, out_w = [], [], []
    for idx, wt in ((lo, 1.0 - frac), (lo + 1, frac)):
        keep = (idx >= 0) & (idx < size) & (wt > 0)
        if abs(vy) >= abs(vx):
            pix = lines[keep] * width + idx[keep]
        else:
            pix = idx[keep] * width + lines[keep]
        out_d.append(det[keep])
        out_p.append(pix)
        out_w.append(w * wt[keep])
    return np.concatenate(out_d), np.concatenate(out_p), np.concatenate(out_w)


class _ProceduralProjector(LinearOperator):
    """Projects onto a set of angles, recomputing ray weights on every call."""

    def __init__(self, angles, height, width, n_detectors):
        self.angles = np.asarray(angles, dtype=float)
        self.height, self.width, self.n_detectors = height, width, n_detectors
        super().__init__(dtype=np.dtype(float),
                         shape=(len(self.angles) * n_detectors, height * width))

    def _triplets(self):
        for a, theta in enumerate(self.angles):
            d, p, w = _ray_weights(theta, self.height, self.width, self.n_detectors)
            yield a * self.n_detectors + d, p, w

    def _matvec(self, x):
        x = np.ravel(x)
        out = np.zeros(self.shape[0])
        for r, p, w in self._triplets():
            out += np.bincount(r, weights=w * x[p], minlength=self.shape[0])
        return out

    def _rmatvec(self, z):
        z = np.ravel(z)
        out = np.zeros(self.shape[1])
        for r, p, w in self._triplets():
            out += np.bincount(p, weights=w * z[r], minlength=self.shape[1])
        return out

    def _adjoint(self):
        return LinearOperator(self.shape[::-1], matvec=self._rmatvec,
                              rmatvec=self._matvec, dtype=float)


def _projection_matrix(angles, height, width, n_detectors) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for a, theta in enumerate(angles):
        d, p, w = _ray_weights(theta, height, width, n_detectors)
        rows.append(a * n_detectors + d)
        cols.append(p)
        vals.append(w)
    shape = (len(angles) * n_detectors, height * width)
    return sp.csr_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def make_radon_operator(height: int, width: int, angles: Sequence[float],
                        n_detectors: int, n_subsets: int,
                        backend: str = "matrix") -> BlockLinearOperator:
    """Parallel-beam projector split into angle subsets.

    Block ``i`` stacks the sinogram rows of angles ``i, i + n_subsets, ...``
    in increasing angle index.
    """
    angles = np.asarray(angles, dtype=float)
    if angles.size == 0:
        raise ValueError("empty angle list")
    subsets = subset_angles(angles.size, n_subsets)
    if backend == "matrix":
        return BlockLinearOperator(
            [_projection_matrix(angles[s], height, width, n_detectors) for s in subsets])
    if backend == "procedural":
        return BlockLinearOperator(
            [_ProceduralProjector(angles[s], height, width, n_detectors) for s in subsets])
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(eq=False)
class Sinogram:
    """Photon counts in angle order, shape ``(n_angles, n_detectors)``."""

    counts: np.ndarray
    angles: np.ndarray
    n_detectors: int
    I0: float
    n_subsets: int

    def _blocks(self, data):
        data = data.reshape(len(self.angles), self.n_detectors)
        return [data[s].ravel() for s in subset_angles(len(self.angles), self.n_subsets)]

    @property
    def log_data(self) -> np.ndarray:
        """Post-log line integrals ``-log(max(counts, 1) / I0)``."""
        return -np.log(np.maximum(self.counts, 1.0) / self.I0)

    def count_blocks(self) -> List[np.ndarray]:
        return self._blocks(self.counts)

    def log_blocks(self) -> List[np.ndarray]:
        return self._blocks(self.log_data)


def simulate_measurements(A: BlockLinearOperator, phantom: Phantom, angles,
                          n_detectors: int, I0: float, seed: int = 0) -> Sinogram:
    """Draw ``counts ~ Poisson(I0 exp(-A x))`` with a seeded generator."""
    if I0 <= 0:
        raise ValueError("I0 must be positive")
    angles = np.asarray(angles, dtype=float)
    n_subsets = A.n
    blocks = A.apply(phantom.image)
    line = np.empty((angles.size, n_detectors))
    for blk, s in zip(blocks, subset_angles(angles.size, n_subsets)):
        line[s] = blk.reshape(len(s), n_detectors)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(I0 * np.exp(-line)).astype(float)
    return Sinogram(counts.ravel(), angles, n_detectors, float(I0), n_subsets)


DEFAULT_KL_OFFSET = 0.1


def problem_from_data(modality: str, A: BlockLinearOperator, sinogram: Sinogram,
                      lam: float, shape, kl_offset: float = DEFAULT_KL_OFFSET
                      ) -> SaddleProblem:
    """Assemble the saddle problem for a modality from measured data.

    sparse-view: ``f_i = 0.5 ||. - b_i||^2`` on post-log data.
    low-dose: ``f_i(z) = KL(z + r; b_i + r)`` on post-log data clipped at
    zero, with background ``r = kl_offset``. Rays with ``b_i = 0`` make the
    plain (``r = 0``) divergence nonsmooth at the box boundary and stall
    every solver; a small offset keeps the objective finite on the box.
    Both use the ``[0, 1]`` box and the edge-preserving smooth prior.
    """
    if modality == "sparse-view":
        fs = [SquaredL2(b) for b in sinogram.log_blocks()]
    elif modality == "low-dose":
        if kl_offset < 0:
            raise ValueError("kl_offset must be nonnegative")
        fs = [KullbackLeibler(np.maximum(b, 0.0) + kl_offset,
                              background=kl_offset if kl_offset > 0 else None)
              for b in sinogram.log_blocks()]
    else:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    return SaddleProblem(A=A, f_blocks=fs, g=BoxIndicator(0.0, 1.0),
                         h=EdgePreserving(lam=lam, shape=tuple(shape)))


def build_problem(modality: str, height: int = 64, width: int = 64,
                  n_angles: Optional[int] = None, n_detectors: Optional[int] = None,
                  lam: float = DEFAULT_LAMBDA, I0: Optional[float] = None,
                  n_subsets: int = 10, seed: int = 0, backend: str = "matrix",
                  kl_offset: float = DEFAULT_KL_OFFSET):
    """Return ``(problem, phantom, sinogram)`` for a CT modality."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {MODALITIES}")
    d_angles, d_det, d_I0 = default_geometry(modality, width)
    n_angles = n_angles or d_angles
    n_detectors = n_detectors or d_det
    I0 = I0 or d_I0
    phantom = make_phantom(height, width)
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    A = make_radon_operator(height, width, angles, n_detectors, n_subsets, backend)
    sino = simulate_measurements(A, phantom, angles, n_detectors, I0, seed)
    problem = problem_from_data(modality, A, sino, lam, (height, width), kl_offset)
    return problem, phantom, sino


# --- flat binary + JSON sidecar I/O ---------------------------------------

def _write_pair(stem: Path, data: np.ndarray, meta: dict):
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    try:
        np.asarray(data, dtype="<f8").tofile(bin_path)
        meta = dict(meta, dtype="<f8", count=int(np.size(data)), data=bin_path.name)
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {bin_path}: {exc}") from exc


def _read_pair(stem: Path):
    stem = Path(stem)
    try:
        meta = json.loads(stem.with_suffix(".json").read_text())
        data = np.fromfile(stem.parent / meta["data"], dtype=meta["dtype"])
    except OSError as exc:
        raise OSError(f"cannot read {stem}: {exc}") from exc
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{stem}.json: malformed sidecar ({exc})") from exc
    if data.size != meta["count"]:
        raise ValueError(f"{stem}: expected {meta['count']} values, found {data.size}")
    return data.astype(float), meta


def save_phantom(stem, phantom: Phantom, extra: Optional[dict] = None):
    meta = {"kind": "phantom", "height": phantom.height, "width": phantom.width}
    meta.update(extra or {})
    _write_pair(stem, phantom.image, meta)


def load_phantom(stem):
    """Return ``(phantom, sidecar_dict)``."""
    data, meta = _read_pair(stem)
    return Phantom(data, meta["height"], meta["width"]), meta


def save_sinogram(stem, sino: Sinogram, extra: Optional[dict] = None):
    meta = {"kind": "sinogram", "angles": [float(a) for a in sino.angles],
            "n_angles": int(sino.angles.size), "n_detectors": sino.n_detectors,
            "I0": sino.I0, "n_subsets": sino.n_subsets}
    meta.update(extra or {})
    _write_pair(stem, sino.counts, meta)


def load_sinogram(stem):
    """Return ``(sinogram, sidecar_dict)``."""
    data, meta = _read_pair(stem)
    sino = Sinogram(data, np.array(meta["angles"]), meta["n_detectors"],
                    meta["I0"], meta["n_subsets"])
    return sino, meta
