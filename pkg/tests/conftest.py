import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session", autouse=True)
def compiled_kernels():
    """Compile the solver kernels once so timing tests measure steady state."""
    from agingmpc.qp import QpProblem, solve
    solve(QpProblem(np.eye(1), [-1.0], np.eye(1), [0.0], [10.0]))
