import numpy as np
import pytest

from fedavopy import ModelSpec, synthetic_classification


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        # --runslow given in cli: do not skip slow tests
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class ScriptedRng:
    """
    Stand-in for numpy.random.Generator that replays fixed draws, so step functions can be
    checked against hand-evaluated formulas.
    """

    def __init__(self, uniforms=(), normals=()):
        self.uniforms = list(uniforms)
        self.normals = list(normals)

    def random(self, size=None):
        if size is None:
            return self.uniforms.pop(0)
        values = [self.uniforms.pop(0) for _ in range(int(np.prod(size)))]
        return np.array(values).reshape(size)

    def standard_normal(self, size=None):
        if size is None:
            return self.normals.pop(0)
        values = [self.normals.pop(0) for _ in range(int(np.prod(size)))]
        return np.array(values).reshape(size)

    @property
    def exhausted(self):
        return not self.uniforms and not self.normals


@pytest.fixture
def scripted():
    return ScriptedRng


SPHERE = lambda x: float(np.sum(np.asarray(x) ** 2))  # noqa: E731

BLOBS = synthetic_classification(n=300, num_classes=3, dims=6, spread=0.5, seed=12345)


@pytest.fixture
def sphere():
    return SPHERE


@pytest.fixture
def blobs():
    return BLOBS


@pytest.fixture
def blobs_spec():
    return ModelSpec((6, 8, 3))
