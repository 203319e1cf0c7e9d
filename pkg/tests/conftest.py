import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from proxsplit.synthetic import make_images, random_patches  # noqa: E402

ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_data():
    """600 training patches (32 x 32) from 6 images and 120 held-out patches from 3 others."""
    train = random_patches(make_images(6, 96, 1), 32, 100, 0)
    held = random_patches(make_images(3, 96, 99), 32, 40, 1)
    return train, held
