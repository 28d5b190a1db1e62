"""Config-driven experiments: data, reference, solver runs and CSV output.

Output directory layout::

    phantom.bin / phantom.json        CT ground truth (CT modalities only)
    sinogram.bin / sinogram.json      simulated counts
    reference.npz / reference.json    saddle-point estimate and certificate
    run_<algo>_<seed>.csv             one row per checkpoint
    summary.csv                       per-epoch mean and std across seeds
    manifest.json                     step sizes, hashes and file list

Data and reference files carry the hash of the ``[problem]`` section and are
reused when it matches. All CSV content is a function of the config alone
(``seconds`` stays empty unless ``output.timing`` is set).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import ct
from .config import ConfigError, ExperimentConfig, config_hash
from .diagnostics import ReferenceSolution, compute_reference, make_monitor
from .sampling import (
    Sampler, StepSizeError, StepSizes, default_step_rule, make_importance_sampler,
    make_uniform_sampler, validate_step_sizes,
)
from .solvers import RunRecord, SaddleProblem, condat_vu, condat_vu_steps, spdhg, tos_spdhg
from .synthetic import make_identity_problem, make_synthetic_problem

__all__ = [
    "CSV_COLUMNS",
    "ProblemBundle",
    "build_bundle",
    "condat_vu_step_report",
    "ensure_reference",
    "format_csv",
    "make_sampler",
    "problem_hash",
    "run_hash",
    "run_experiment",
    "stochastic_steps",
    "summarize",
    "write_data",
]

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "k", "objective", "gap", "psnr", "seconds")
STOCHASTIC = ("tos-spdhg", "spdhg")


@dataclass
class ProblemBundle:
    problem: SaddleProblem
    phash: str
    phantom: Optional[ct.Phantom] = None
    sinogram: Optional[ct.Sinogram] = None
    _block_norms: Optional[np.ndarray] = None
    _op_norm: Optional[float] = None

    @property
    def ground_truth(self):
        return None if self.phantom is None else self.phantom.image

    @property
    def block_norms(self) -> np.ndarray:
        if self._block_norms is None:
            self._block_norms = self.problem.A.block_norms()
        return self._block_norms

    @property
    def op_norm(self) -> float:
        if self._op_norm is None:
            self._op_norm = self.problem.A.norm()
        return self._op_norm


def problem_hash(cfg: ExperimentConfig) -> str:
    return config_hash(cfg, sections=("problem",))


def run_hash(cfg: ExperimentConfig) -> str:
    """Config hash ignoring where the output goes."""
    placed = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, directory=""))
    return config_hash(placed)


def _ct_geometry(p):
    n_angles, n_det, I0 = ct.default_geometry(p.modality, p.width)
    return p.n_angles or n_angles, p.n_detectors or n_det, p.I0 or I0


def _simulate(cfg):
    p = cfg.problem
    n_angles, n_det, I0 = _ct_geometry(p)
    phantom = ct.make_phantom(p.height, p.width)
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    A = ct.make_radon_operator(p.height, p.width, angles, n_det, p.n_subsets, p.backend)
    return A, phantom, ct.simulate_measurements(A, phantom, angles, n_det, I0, p.seed)


def _load_data(directory: Path, phash: str):
    stems = directory / "phantom", directory / "sinogram"
    if not all(s.with_suffix(".json").exists() for s in stems):
        return None
    phantom, pmeta = ct.load_phantom(stems[0])
    sino, smeta = ct.load_sinogram(stems[1])
    if pmeta.get("problem_hash") != phash or smeta.get("problem_hash") != phash:
        log.info("data in %s belongs to another problem config; regenerating", directory)
        return None
    return phantom, sino


def write_data(directory, bundle: ProblemBundle):
    """Write phantom and sinogram with sidecars tagged by the problem hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tag = {"problem_hash": bundle.phash}
    ct.save_phantom(directory / "phantom", bundle.phantom, tag)
    ct.save_sinogram(directory / "sinogram", bundle.sinogram, tag)


def build_bundle(cfg: ExperimentConfig, data_dir=None) -> ProblemBundle:
    """Build the configured problem, reusing CT data in ``data_dir`` when its
    problem hash matches (and writing it there otherwise)."""
    p = cfg.problem
    phash = problem_hash(cfg)
    if p.modality == "synthetic":
        prob = make_synthetic_problem(p.dim, p.n_subsets, p.rows_per_block, p.mu, p.seed)
        return ProblemBundle(prob, phash)
    if p.modality == "identity":
        return ProblemBundle(make_identity_problem(p.dim, p.mu, p.seed), phash)

    loaded = None if data_dir is None else _load_data(Path(data_dir), phash)
    if loaded is None:
        A, phantom, sino = _simulate(cfg)
    else:
        phantom, sino = loaded
        A = ct.make_radon_operator(p.height, p.width, sino.angles, sino.n_detectors,
                                   p.n_subsets, p.backend)
    prob = ct.problem_from_data(p.modality, A, sino, p.lam, (p.height, p.width),
                                p.kl_offset)
    bundle = ProblemBundle(prob, phash, phantom, sino)
    if data_dir is not None and loaded is None:
        write_data(data_dir, bundle)
    return bundle


# --- reference -------------------------------------------------------------

def _reference_meta(cfg, phash):
    return {"problem_hash": phash, "iterations": cfg.reference.iters,
            "tol": cfg.reference.tol, "gamma": cfg.solver.gamma}


def ensure_reference(cfg: ExperimentConfig, bundle: ProblemBundle, directory=None,
                     recompute: bool = False) -> Optional[ReferenceSolution]:
    """Load or compute the reference saddle point; ``None`` if
    ``reference.iters == 0``. An uncertified reference is logged and used."""
    if cfg.reference.iters == 0:
        return None
    meta = _reference_meta(cfg, bundle.phash)
    npz = json_path = None
    if directory is not None:
        npz = Path(directory) / "reference.npz"
        json_path = npz.with_suffix(".json")
    if not recompute and json_path is not None and json_path.exists():
        try:
            stored = json.loads(json_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"cannot read {json_path}: {exc}") from exc
        if all(stored.get(k) == v for k, v in meta.items()):
            ref = _load_reference(npz, stored, bundle.problem)
            _warn_uncertified(ref)
            return ref
    ref = compute_reference(bundle.problem, cfg.reference.iters, cfg.reference.tol,
                            cfg.solver.gamma, op_norm=bundle.op_norm)
    if npz is not None:
        npz.parent.mkdir(parents=True, exist_ok=True)
        np.savez(npz, x_star=ref.x_star, y_star=np.concatenate(ref.y_star))
        meta.update(certified=ref.certified, movement=ref.movement,
                    phi_at_saddle=ref.phi_at_saddle)
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _warn_uncertified(ref)
    return ref


def _load_reference(npz, stored, problem):
    try:
        with np.load(npz) as data:
            x_star, y_flat = data["x_star"], data["y_star"]
    except (OSError, KeyError, ValueError) as exc:
        raise OSError(f"cannot read {npz}: {exc}") from exc
    y_star = problem.A.split(y_flat)
    return ReferenceSolution(x_star, y_star, stored["phi_at_saddle"],
                             stored["iterations"], stored["movement"], stored["certified"])


def _warn_uncertified(ref):
    if not ref.certified:
        log.warning("reference not certified (relative movement %.3g after %d "
                    "iterations); gaps are measured against it anyway",
                    ref.movement, ref.iterations)


# --- step sizes ------------------------------------------------------------

def make_sampler(cfg: ExperimentConfig, bundle: ProblemBundle, seed: int) -> Sampler:
    if cfg.solver.sampler == "importance":
        return make_importance_sampler(bundle.block_norms, seed)
    return make_uniform_sampler(bundle.problem.n, seed)


def stochastic_steps(cfg: ExperimentConfig, bundle: ProblemBundle,
                     strict: bool = True) -> StepSizes:
    """Certified steps for the stochastic solvers; ``strict=False`` returns
    uncertified candidates (``valid=False``) instead of raising."""
    probs = make_sampler(cfg, bundle, 0).probs
    rho = cfg.solver.rho if cfg.solver.rho is not None else 1.0 / probs.min()
    steps = default_step_rule(bundle.block_norms, probs, bundle.problem.lipschitz,
                              cfg.solver.gamma, A=bundle.problem.A, rho=rho,
                              strict=strict)
    steps.theta = cfg.solver.theta
    return steps


def condat_vu_step_report(cfg: ExperimentConfig, bundle: ProblemBundle):
    """Return ``(tau, sigma, margin)`` with
    ``margin = 1/tau - sigma ||A||^2 - L/2`` (certified iff ``>= 0``)."""
    rho = cfg.solver.rho if cfg.solver.rho is not None else 1.0
    tau, sigma = condat_vu_steps(bundle.problem, cfg.solver.gamma, bundle.op_norm, rho)
    margin = 1.0 / tau - sigma * bundle.op_norm ** 2 - bundle.problem.lipschitz / 2
    return tau, sigma, margin


# --- runs ------------------------------------------------------------------

def _run(cfg, bundle, ref, algo, seed, steps, unsafe) -> RunRecord:
    hook = make_monitor(bundle.problem, ref, bundle.ground_truth)
    epochs = cfg.solver.epochs
    every = cfg.output.checkpoint_every
    if algo == "condat-vu":
        tau, sigma, _ = condat_vu_step_report(cfg, bundle)
        _, rec = condat_vu(bundle.problem, tau, sigma, epochs, hook=hook,
                           checkpoint_every=every, unsafe=unsafe, op_norm=bundle.op_norm)
    else:
        solver = tos_spdhg if algo == "tos-spdhg" else spdhg
        n = bundle.problem.n
        _, rec = solver(bundle.problem, steps, make_sampler(cfg, bundle, seed),
                        epochs * n, hook=hook, checkpoint_every=every, unsafe=unsafe)
    rec.algorithm, rec.seed = algo, seed
    rec.config_hash = run_hash(cfg)
    return rec


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if np.isnan(value):
        return ""
    if value.is_integer() and abs(value) < 2 ** 53:
        return str(int(value))
    return repr(value)


def format_csv(record: RunRecord, timing: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in record.rows:
        vals = []
        for col in CSV_COLUMNS:
            v = row.get(col)
            if col == "seconds" and not timing:
                v = None
            vals.append(_fmt(v))
        writer.writerow(vals)
    return buf.getvalue()


def summarize(records: List[RunRecord]) -> str:
    """Per-algorithm, per-epoch mean and population std across seeds."""
    metrics = ("objective", "gap", "psnr")
    header = ["algorithm", "epoch", "k", "n_seeds"]
    for m in metrics:
        header += [f"{m}_mean", f"{m}_std"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    by_algo: Dict[str, List[RunRecord]] = {}
    for rec in records:
        by_algo.setdefault(rec.algorithm, []).append(rec)
    for algo, recs in by_algo.items():
        for idx, row in enumerate(recs[0].rows):
            out = [algo, _fmt(row["epoch"]), _fmt(row["k"]), str(len(recs))]
            for m in metrics:
                vals = np.array([r.rows[idx].get(m, np.nan) for r in recs], dtype=float)
                if np.all(np.isnan(vals)):
                    out += ["", ""]
                else:
                    out += [_fmt(np.mean(vals)), _fmt(np.std(vals))]
            writer.writerow(out)
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1,
                   override_unsafe: bool = False) -> List[RunRecord]:
    """Run every (algorithm, seed) pair and write CSVs and a manifest.

    Raises :class:`StepSizeError` if steps cannot be certified (unless
    ``override_unsafe``) and :class:`~tos_spdhg.solvers.DivergenceError` on a
    non-finite iterate.
    """
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    bundle = build_bundle(cfg, data_dir=out)
    algos = cfg.solver.algorithms
    if "spdhg" in algos and not getattr(bundle.problem.h, "is_zero", False):
        raise ConfigError("spdhg needs a problem without smooth term (lam = 0 or mu = 0)")

    steps = None
    manifest = {"config_hash": run_hash(cfg), "problem_hash": bundle.phash,
                "steps": {}, "runs": []}
    if any(a in STOCHASTIC for a in algos):
        steps = stochastic_steps(cfg, bundle, strict=not override_unsafe)
        if not steps.valid:
            log.warning("running with uncertified step sizes (override)")
        ok, _ = validate_step_sizes(steps, make_sampler(cfg, bundle, 0).probs)
        manifest["steps"]["stochastic"] = {
            "tau": steps.tau, "S": [float(s) for s in steps.S],
            "eso_v": [float(v) for v in steps.eso_v], "theta": float(steps.theta),
            "lipschitz": float(steps.lipschitz), "certified": bool(ok)}
    if "condat-vu" in algos:
        tau, sigma, margin = condat_vu_step_report(cfg, bundle)
        if margin < 0:
            if not override_unsafe:
                raise StepSizeError(f"Condat-Vu step condition violated by {-margin:.3g}")
            log.warning("running Condat-Vu with uncertified step sizes (override)")
        manifest["steps"]["condat-vu"] = {"tau": float(tau), "sigma": float(sigma),
                                          "margin": float(margin),
                                          "certified": bool(margin >= 0)}

    ref = ensure_reference(cfg, bundle, out)
    if ref is not None:
        manifest["reference"] = {"iterations": int(ref.iterations),
                                 "movement": float(ref.movement),
                                 "certified": bool(ref.certified)}

    jobs = [(a, s) for a in algos for s in cfg.solver.seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run, cfg, bundle, ref, a, s, steps, override_unsafe)
                   for a, s in jobs]
        records = [f.result() for f in futures]

    for rec in records:
        name = f"run_{rec.algorithm}_{rec.seed}.csv"
        (out / name).write_text(format_csv(rec, cfg.output.timing))
        manifest["runs"].append(name)
    (out / "summary.csv").write_text(summarize(records))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return records
