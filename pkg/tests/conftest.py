import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from dsn.config import Load, ProblemConfig, Support  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.acceptance_lines = ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def problem():
    return ProblemConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def two_bar_problem(p=1.0):
    """Pins at (+-0.5, 0), apex (0, 0.5) loaded straight down."""
    return ProblemConfig(
        supports=(Support(-0.5, 0.0, "pin"), Support(0.5, 0.0, "pin")),
        loads=(Load(0.0, 0.5, 0.0, -p),),
    )


def single_bar_problem(p=1.0):
    """Vertical bar: pin at the bottom, top node guided sideways, axial load at the top."""
    return ProblemConfig(
        supports=(Support(0.0, -0.5, "pin"), Support(0.0, 0.5, "roller_x")),
        loads=(Load(0.0, 0.5, 0.0, -p),),
    )
