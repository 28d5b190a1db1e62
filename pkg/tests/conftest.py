import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tos_spdhg.functions import BoxIndicator, Quadratic, SquaredL2
from tos_spdhg.linalg import BlockLinearOperator
from tos_spdhg.solvers import SaddleProblem
from tos_spdhg.synthetic import make_synthetic_problem

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance criterion -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_problem():
    """d=5, n=2 random 3x5 blocks, box, small quadratic."""
    rng = np.random.default_rng(7)
    blocks = [rng.standard_normal((3, 5)) for _ in range(2)]
    bs = [rng.standard_normal(3) for _ in range(2)]
    return SaddleProblem(A=BlockLinearOperator(blocks), f_blocks=[SquaredL2(b) for b in bs],
                         g=BoxIndicator(0.0, 1.0), h=Quadratic(0.05, rng.uniform(0, 1, 5)))


@pytest.fixture
def small_problem():
    return make_synthetic_problem(dim=12, n_blocks=4, rows_per_block=5, mu=0.2, seed=3)
