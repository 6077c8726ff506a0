import numpy as np
import pytest

from qeff.cavity_dynamics import ReadoutParams
from qeff.pulses import skyline_envelope, square_ramp_envelope, two_step_envelope

from .verdicts import ACCEPTANCE


@pytest.fixture
def nominal():
    return ReadoutParams.nominal()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["square", "two-step", "skyline"])
def family(request):
    return {"square": square_ramp_envelope, "two-step": two_step_envelope,
            "skyline": skyline_envelope}[request.param]


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {line}")
