import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bhvloss.dataset import generate_training_set, reference_grid  # noqa: E402
from bhvloss.device_model import (  # noqa: E402
    read_config, reference_config_path, reference_device,
)


@pytest.fixture(scope="session")
def device():
    return reference_device()


@pytest.fixture(scope="session")
def device_dict():
    return read_config(reference_config_path())["device"]


@pytest.fixture(scope="session")
def grid():
    return reference_grid()


@pytest.fixture(scope="session")
def training(grid, device):
    return generate_training_set(grid, device)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
