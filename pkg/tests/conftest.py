import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairfed.tensor import Batch, ModelSpec  # noqa: E402

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def report():
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)


def random_batch(rng, spec: ModelSpec, n: int) -> Batch:
    return Batch(rng.standard_normal((n, spec.input_dim)), rng.integers(0, spec.num_classes, n))
