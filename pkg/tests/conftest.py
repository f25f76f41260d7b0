import numpy as np
import pytest

from iidlab.synthgen import SceneParams, gen_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_params():
    return SceneParams(resolution=32)


@pytest.fixture(scope="session")
def scene(small_params):
    return gen_scene(small_params, 3)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """40 generated 32x32 scenes on disk; returns the manifest path."""
    from iidlab.synthgen import gen_dataset

    out = tmp_path_factory.mktemp("data")
    return gen_dataset(SceneParams(resolution=32, clip_probability=0.3), 40, out, base_seed=100)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
