import functools

import numpy as np
import pytest

from spinmesh import synth
from spinmesh.net import FaceEdgeNet

GENUS0 = ("icosphere", "bumpy_sphere", "ellipsoid", "capsule_bent", "icosahedron")
CORPUS = GENUS0 + ("torus", "genus2")

_ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def corpus_net(name: str, **kw) -> FaceEdgeNet:
    V, F = synth.generate(name, **kw)
    return FaceEdgeNet(V, F)


@pytest.fixture(scope="session")
def icosphere():
    return corpus_net("icosphere")


@pytest.fixture(scope="session")
def small_sphere():
    V, F = synth.icosphere(2)
    return FaceEdgeNet(V, F)


@pytest.fixture(scope="session")
def bumpy():
    return corpus_net("bumpy_sphere")


@pytest.fixture(scope="session")
def small_bumpy():
    V, F = synth.bumpy_sphere(frequency=5)
    return FaceEdgeNet(V, F)


@pytest.fixture(scope="session")
def torus():
    return corpus_net("torus")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def record_acceptance(line: str):
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
