import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from remind.types import FeatureDataset  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_dataset(rng, n=12, m=2, d=4, num_classes=3, instances=4):
    X = rng.normal(size=(n, m, m, d)).astype(np.float32)
    y = np.arange(n) % num_classes
    inst = rng.integers(0, instances, size=n)
    return FeatureDataset(X, y, num_classes, inst, np.arange(n), "random fixture")


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng)


_ACCEPTANCE: list[str] = []


class _Recorder:
    def __call__(self, criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)


@pytest.fixture(scope="session")
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
