import numpy as np
import pytest
from hypothesis import settings

from dropout_transfer.synth import GeneratorConfig, generate_cohort

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(GeneratorConfig(n_students=300, seed=3))


@pytest.fixture(scope="session")
def small_pair():
    S = generate_cohort(GeneratorConfig(n_students=260, seed=4, course_id="S"))
    T = generate_cohort(GeneratorConfig(n_students=220, seed=5, course_id="T"))
    return S, T


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
