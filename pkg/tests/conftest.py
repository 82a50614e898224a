import numpy as np
import pytest

from inforeg_lab.datagen import ModalitySpec, generate
from inforeg_lab.numerics import make_rng

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_specs(dim_a=6, dim_b=5, sep_a=4.0, sep_b=1.5):
    return [ModalitySpec(dim_a, 3, sep_a, 1.0, "a"), ModalitySpec(dim_b, 3, sep_b, 1.0, "b")]


@pytest.fixture
def toy_data():
    specs = small_specs()
    train = generate(specs, 3, 90, make_rng(0, "data"), "train")
    test = generate(specs, 3, 45, make_rng(0, "test_data"), "test")
    return train, test


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
