import numpy as np
import pytest
from hypothesis import settings

from hiergp.datagen import TaskDataset

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def toy_task(n=12, seed=0, task_id=0, separation=0.5, n_test=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n + n_test, 2)) * [1.0, 0.75]
    y = np.sin(3 * x[:, 0]) + 0.5 * x[:, 1] + 0.1 * rng.normal(size=n + n_test)
    mask = np.zeros(n + n_test, dtype=bool)
    mask[:n] = True
    return TaskDataset((0, task_id + 1), separation, x, y, mask, task_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def task():
    return toy_task()


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
