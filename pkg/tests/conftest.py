import numpy as np
import pytest
import torch

from dualtab.model import ICLModel, ModelConfig
from dualtab.numerics import set_threads

set_threads(1)

TINY = ModelConfig(k=8, k_src=4, heads=2, depth=2)


@pytest.fixture
def tiny_model():
    return ICLModel(TINY, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def blobs(rng, n, d, C, sep=3.0):
    """Gaussian class blobs; a cheap labelled toy set."""
    centers = rng.normal(size=(C, d)) * sep
    y = np.arange(n) % C
    X = centers[y] + rng.normal(size=(n, d))
    return X, y


ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    """Print and remember one acceptance line; returns ``passed`` for the assert."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
