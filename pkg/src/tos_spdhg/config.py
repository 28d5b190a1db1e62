"""Experiment configuration: a sectioned ``key = value`` file.

Example::

    [problem]
    modality = sparse-view
    lam = 0.002

    [solver]
    algorithms = tos-spdhg, condat-vu
    epochs = 150
    seeds = 0, 1, 2

    [output]
    directory = results

    [reference]
    iters = 20000

Unknown sections or keys are rejected. Keys left out take the defaults below;
``None`` defaults mean "modality default" and are omitted when serializing.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from typing import Optional, Tuple

__all__ = [
    "ALGORITHMS",
    "ConfigError",
    "ExperimentConfig",
    "OutputConfig",
    "ProblemConfig",
    "ReferenceConfig",
    "SolverConfig",
    "config_hash",
    "load_config",
    "parse_config",
    "serialize_config",
]

ALGORITHMS = ("tos-spdhg", "spdhg", "condat-vu")
PROBLEM_KINDS = ("sparse-view", "low-dose", "synthetic", "identity")
SAMPLERS = ("uniform", "importance")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    modality: str = "sparse-view"
    height: int = 64
    width: int = 64
    n_angles: Optional[int] = None
    n_detectors: Optional[int] = None
    lam: float = 0.002
    I0: Optional[float] = None
    kl_offset: float = 0.1
    n_subsets: int = 10
    backend: str = "matrix"
    seed: int = 0
    # synthetic / identity problems
    dim: int = 50
    rows_per_block: int = 10
    mu: float = 0.1


@dataclass
class SolverConfig:
    algorithms: Tuple[str, ...] = ("tos-spdhg", "condat-vu")
    epochs: int = 150
    gamma: float = 0.99
    theta: float = 1.0
    # primal/dual balance; None: 1 / min p_i for stochastic solvers, 1 for
    # Condat-Vu
    rho: Optional[float] = None
    sampler: str = "uniform"
    seeds: Tuple[int, ...] = (0,)


@dataclass
class OutputConfig:
    directory: str = "results"
    checkpoint_every: int = 1
    timing: bool = False


@dataclass
class ReferenceConfig:
    iters: int = 0
    tol: float = 1e-8


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    reference: ReferenceConfig = field(default_factory=ReferenceConfig)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _section_class(name):
    return {"problem": ProblemConfig, "solver": SolverConfig,
            "output": OutputConfig, "reference": ReferenceConfig}[name]


def _base_type(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    if typing.get_origin(tp) is typing.Union:
        return _base_type(args[0])
    return tp


def _parse_value(raw: str, tp, where: str):
    tp = _base_type(tp)
    try:
        if typing.get_origin(tp) is tuple:
            item = typing.get_args(tp)[0]
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(_parse_value(p, item, where) for p in parts)
        if tp is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tp}") from None


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _validate(cfg: ExperimentConfig):
    p, s, o, r = cfg.problem, cfg.solver, cfg.output, cfg.reference
    if p.modality not in PROBLEM_KINDS:
        raise ConfigError(f"problem.modality must be one of {PROBLEM_KINDS}, got {p.modality!r}")
    if p.backend not in ("matrix", "procedural"):
        raise ConfigError(f"problem.backend must be matrix or procedural, got {p.backend!r}")
    if p.n_subsets < 1 or p.dim < 1 or p.rows_per_block < 1:
        raise ConfigError("problem.n_subsets, dim and rows_per_block must be >= 1")
    if p.lam < 0 or p.mu < 0 or p.kl_offset < 0:
        raise ConfigError("problem.lam, mu and kl_offset must be nonnegative")
    if not s.algorithms:
        raise ConfigError("solver.algorithms is empty")
    for a in s.algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; expected one of {ALGORITHMS}")
    if not s.seeds:
        raise ConfigError("solver.seeds is empty")
    if s.sampler not in SAMPLERS:
        raise ConfigError(f"solver.sampler must be one of {SAMPLERS}, got {s.sampler!r}")
    if s.epochs < 1 or s.gamma <= 0 or s.theta <= 0:
        raise ConfigError("solver.epochs, gamma and theta must be positive")
    if s.rho is not None and s.rho <= 0:
        raise ConfigError("solver.rho must be positive")
    if o.checkpoint_every < 1:
        raise ConfigError("output.checkpoint_every must be >= 1")
    if r.iters < 0 or r.tol <= 0:
        raise ConfigError("reference.iters must be >= 0 and reference.tol > 0")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        cls = _section_class(name)
        hints = typing.get_type_hints(cls)
        values = {}
        for key, raw in parser.items(name):
            if key not in hints:
                raise ConfigError(f"unknown key {name}.{key}")
            values[key] = _parse_value(raw, hints[key], f"{name}.{key}")
        sections[name] = cls(**values)
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = []
    for sec in dataclasses.fields(cfg):
        lines.append(f"[{sec.name}]")
        obj = getattr(cfg, sec.name)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is not None:
                lines.append(f"{f.name} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg, sections=None) -> str:
    """Short sha256 of the serialized config, optionally restricted to some
    sections."""
    text = serialize_config(cfg)
    if sections is not None:
        keep = []
        current = None
        for line in text.splitlines():
            if line.startswith("["):
                current = line.strip("[]")
            if current in sections:
                keep.append(line)
        text = "\n".join(keep)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
