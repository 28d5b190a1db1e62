import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tos_spdhg import cli, experiment
from tos_spdhg.config import (
    ALGORITHMS, ConfigError, ExperimentConfig, ProblemConfig, SolverConfig, config_hash,
    parse_config, serialize_config,
)
from tos_spdhg.functions import Quadratic
from tos_spdhg.synthetic import make_identity_problem

IDENTITY = """
[problem]
modality = identity
dim = 3
mu = 0

[solver]
algorithms = tos-spdhg, spdhg, condat-vu
epochs = 20
seeds = 0, 1

[output]
checkpoint_every = 5
"""

SMALL_CT = """
[problem]
modality = sparse-view
height = 24
width = 24
n_angles = 12
n_subsets = 3

[solver]
algorithms = tos-spdhg, condat-vu
epochs = 6
seeds = 0, 1

[output]
checkpoint_every = 2

[reference]
iters = 300
"""


def write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run_cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "tos_spdhg.cli", *args],
                          capture_output=True, text=True, env=env)


# --- config ---------------------------------------------------------------

configs = st.builds(
    ExperimentConfig,
    problem=st.builds(ProblemConfig, modality=st.sampled_from(["sparse-view", "synthetic"]),
                      lam=st.floats(0, 1), seed=st.integers(0, 2 ** 31),
                      n_angles=st.one_of(st.none(), st.integers(1, 400))),
    solver=st.builds(SolverConfig,
                     algorithms=st.lists(st.sampled_from(ALGORITHMS), min_size=1,
                                         max_size=3, unique=True).map(tuple),
                     seeds=st.lists(st.integers(0, 1000), min_size=1, max_size=5).map(tuple),
                     gamma=st.floats(0.01, 2.0), rho=st.one_of(st.none(), st.floats(0.1, 50))),
)


@given(configs)
def test_config_roundtrip(cfg):
    back = parse_config(serialize_config(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_defaults_and_hash_sections():
    cfg = parse_config("[problem]\nmodality = low-dose\n")
    assert cfg.problem.lam == 0.002 and cfg.solver.epochs == 150
    other = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, epochs=3))
    assert config_hash(cfg) != config_hash(other)
    assert config_hash(cfg, ["problem"]) == config_hash(other, ["problem"])


@pytest.mark.parametrize("text, match", [
    ("[problem]\ncolour = red\n", "unknown key problem.colour"),
    ("[plotting]\nx = 1\n", "unknown section"),
    ("[solver]\nseeds =\n", "seeds is empty"),
    ("[solver]\nalgorithms = pdhg\n", "unknown algorithm"),
    ("[solver]\nepochs = many\n", "cannot parse"),
    ("[problem]\nmodality = mri\n", "modality"),
    ("[solver]\nrho = -1\n", "rho"),
    ("[output]\ntiming = maybe\n", "cannot parse"),
    ("not an ini file", "malformed"),
])
def test_bad_configs_are_rejected(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


# --- exit codes -----------------------------------------------------------

def test_missing_config_and_bad_arguments_exit_2(tmp_path, capsys):
    assert cli.main(["solve", str(tmp_path / "nope.ini")]) == 2
    assert cli.main(["solve"]) == 2
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["solve", write(tmp_path, "[solver]\nseeds =\n")]) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_seed_variable_exits_2(tmp_path, monkeypatch):
    monkeypatch.setenv("TOS_SEED", "seven")
    assert cli.main(["validate-steps", write(tmp_path, IDENTITY)]) == 2


def test_validate_steps_identity_table(tmp_path, capsys):
    assert cli.main(["validate-steps", write(tmp_path, IDENTITY)]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    header = lines.index(next(line for line in lines if line.split()[:2] == ["i", "p_i"]))
    row = lines[header + 1].split()
    assert row[0] == "0" and float(row[1]) == 1.0 and float(row[3]) > 0
    assert "tos-spdhg: certified" in out and "condat-vu: certified" in out


def test_validate_steps_default_ct_passes(tmp_path, capsys):
    cfg = write(tmp_path, "[problem]\nmodality = sparse-view\n")
    assert cli.main(["validate-steps", cfg]) == 0
    out = capsys.readouterr().out
    assert len([line for line in out.splitlines() if line.split()[:1] == ["9"]]) == 1


def test_validate_steps_large_gamma_exits_3(tmp_path, capsys):
    cfg = write(tmp_path, IDENTITY.replace("epochs = 20", "epochs = 20\ngamma = 5"))
    assert cli.main(["validate-steps", cfg]) == 3
    assert "NOT certified" in capsys.readouterr().out


def test_solve_refuses_uncertified_steps(tmp_path):
    cfg = write(tmp_path, IDENTITY.replace("epochs = 20", "epochs = 20\ngamma = 5"))
    out = tmp_path / "out"
    assert cli.main(["solve", cfg, "--out-dir", str(out)]) == 3
    assert cli.main(["solve", cfg, "--out-dir", str(out), "--override-unsafe-steps"]) == 0
    steps = json.loads((out / "manifest.json").read_text())["steps"]
    assert not steps["stochastic"]["certified"] and not steps["condat-vu"]["certified"]


def test_nan_exits_4(tmp_path, monkeypatch):
    class Poisoned(Quadratic):
        def grad(self, x):
            return np.full(np.shape(x), np.nan)

    def poisoned_problem(dim, mu, seed):
        return dataclasses.replace(make_identity_problem(dim, mu, seed), h=Poisoned(0.1))

    monkeypatch.setattr(experiment, "make_identity_problem", poisoned_problem)
    cfg = write(tmp_path, IDENTITY.replace("tos-spdhg, spdhg, condat-vu", "tos-spdhg"))
    assert cli.main(["solve", cfg, "--out-dir", str(tmp_path / "o")]) == 4


def test_spdhg_with_smooth_term_is_a_config_error(tmp_path):
    cfg = write(tmp_path, IDENTITY.replace("mu = 0", "mu = 0.5"))
    assert cli.main(["solve", cfg, "--out-dir", str(tmp_path / "o")]) == 2


def test_bad_thread_count_exits_2(tmp_path):
    cfg = write(tmp_path, IDENTITY)
    assert cli.main(["solve", cfg, "--out-dir", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_unwritable_output_exits_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["solve", write(tmp_path, IDENTITY), "--out-dir", str(blocker / "x")]) == 1


def test_phantom_needs_ct_modality(tmp_path):
    assert cli.main(["phantom", write(tmp_path, IDENTITY)]) == 2
    assert cli.main(["reference", write(tmp_path, IDENTITY)]) == 2


# --- outputs --------------------------------------------------------------

def test_solve_writes_csvs_summary_and_manifest(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["solve", write(tmp_path, IDENTITY), "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted(["manifest.json", "summary.csv"]
                           + [f"run_{a}_{s}.csv" for a in ALGORITHMS for s in (0, 1)])
    lines = (out / "run_tos-spdhg_0.csv").read_text().splitlines()
    assert lines[0] == "epoch,k,objective,gap,psnr,seconds"
    assert [line.split(",")[:2] for line in lines[1:]] == [["5", "5"], ["10", "10"],
                                                             ["15", "15"], ["20", "20"]]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["steps"]["stochastic"]["certified"]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("algorithm,epoch,k,n_seeds")
    assert len(summary) == 1 + 3 * 4


def test_threads_and_reruns_give_identical_bytes(tmp_path):
    cfg = write(tmp_path, SMALL_CT)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["solve", cfg, "--out-dir", str(a)]) == 0
    assert cli.main(["solve", cfg, "--out-dir", str(b), "--threads", "2"]) == 0
    for path in sorted(a.iterdir()):
        assert path.read_bytes() == (b / path.name).read_bytes(), path.name


def test_seed_variable_changes_the_data(tmp_path, monkeypatch):
    cfg = write(tmp_path, SMALL_CT)
    assert cli.main(["solve", cfg, "--out-dir", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("TOS_SEED", "17")
    assert cli.main(["solve", cfg, "--out-dir", str(tmp_path / "b")]) == 0
    sino_a = (tmp_path / "a" / "sinogram.bin").read_bytes()
    sino_b = (tmp_path / "b" / "sinogram.bin").read_bytes()
    assert sino_a != sino_b
    assert ((tmp_path / "a" / "phantom.bin").read_bytes()
            == (tmp_path / "b" / "phantom.bin").read_bytes())


def test_phantom_then_solve_reuses_data(tmp_path):
    cfg = write(tmp_path, SMALL_CT)
    out = tmp_path / "out"
    assert cli.main(["phantom", cfg, "--out-dir", str(out)]) == 0
    before = {p.name: (p.read_bytes(), p.stat().st_mtime_ns) for p in out.iterdir()}
    assert sorted(before) == ["phantom.bin", "phantom.json", "sinogram.bin", "sinogram.json"]
    assert cli.main(["solve", cfg, "--out-dir", str(out)]) == 0
    for name, (data, mtime) in before.items():
        assert (out / name).read_bytes() == data
        assert (out / name).stat().st_mtime_ns == mtime


def test_reference_command_and_uncertified_warning(tmp_path, caplog):
    cfg = write(tmp_path, SMALL_CT.replace("iters = 300", "iters = 5"))
    out = tmp_path / "out"
    with caplog.at_level("WARNING", logger="tos_spdhg"):
        assert cli.main(["reference", cfg, "--out-dir", str(out)]) == 0
    assert "not certified" in caplog.text
    meta = json.loads((out / "reference.json").read_text())
    assert meta["certified"] is False and meta["iterations"] == 5
    assert cli.main(["solve", cfg, "--out-dir", str(out)]) == 0
    assert (out / "run_tos-spdhg_0.csv").read_text().splitlines()[1].split(",")[3] != ""


def test_console_entry_point_exit_codes(tmp_path):
    assert run_cli("validate-steps", write(tmp_path, IDENTITY)).returncode == 0
    assert run_cli("solve", str(tmp_path / "missing.ini")).returncode == 2
    assert run_cli("--help").returncode == 0
