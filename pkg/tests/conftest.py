import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from sepgconv import kernels  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CONV_BACKENDS = ["numba", "numpy"] if kernels.HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=CONV_BACKENDS)
def backend(request):
    """Run the test once per convolution backend."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None:
        return
    broken = {r.nodeid for key in ("failed", "error") for r in terminalreporter.stats.get(key, [])}
    terminalreporter.section("acceptance criteria")
    for number in range(1, 10):
        if number in acceptance.RESULTS:
            ok, detail = acceptance.RESULTS[number]
            terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif any(f"test_criterion_{number}_" in nodeid for nodeid in broken):
            terminalreporter.write_line(f"criterion {number}: FAIL  (raised before reporting)")
        else:
            terminalreporter.write_line(f"criterion {number}: not run")
