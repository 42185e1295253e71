import numpy as np
import pytest
from hypothesis import settings

from isptrain.data import DatasetSpec, generate_lr, generate_pmf

settings.register_profile("pkg", deadline=None, max_examples=60)
settings.load_profile("pkg")


@pytest.fixture(scope="session")
def small_lr():
    corpus, w = generate_lr(DatasetSpec(kind="lr", n=4000, dim=200, sparsity=0.05, seed=3))
    return corpus


@pytest.fixture(scope="session")
def small_pmf():
    corpus, _ = generate_pmf(DatasetSpec(kind="pmf", n_users=40, n_movies=60, rank=4,
                                         sparsity=0.3, noise=0.05, seed=3))
    return corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance verdict line; echoed at the end of the run."""
    def add(line: str):
        print(line)
        _VERDICTS.append(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
