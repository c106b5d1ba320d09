import re

import numpy as np
import pytest

from pilotwave.ensembles import EnsembleKind, EnsembleSpec, build_ensemble
from pilotwave.quantum_state import StatisticsMode, TwoParticleWaveFunction

from helpers import ARRIVAL_TIME

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bosonic():
    return TwoParticleWaveFunction.from_geometry()


@pytest.fixture(scope="session")
def maxwell_boltzmann():
    return TwoParticleWaveFunction.from_geometry(mode=StatisticsMode.MAXWELL_BOLTZMANN)


@pytest.fixture(scope="session")
def single_particle():
    return TwoParticleWaveFunction.from_geometry(mode=StatisticsMode.SINGLE_PARTICLE)


@pytest.fixture(scope="session")
def gibbs_ensemble(bosonic):
    """2e4 Born-distributed pairs propagated to the screen arrival time."""
    spec = EnsembleSpec(EnsembleKind.GIBBS, size=20000, seed=3)
    return build_ensemble(bosonic, spec, ARRIVAL_TIME, sample_times=[0.0, ARRIVAL_TIME])


@pytest.fixture(scope="session")
def time_ensemble(bosonic):
    """1e4 pairs started on the antisymmetric slice x1 + x2 = 0."""
    spec = EnsembleSpec(EnsembleKind.TIME, size=10000, seed=4)
    return build_ensemble(bosonic, spec, ARRIVAL_TIME, sample_times=[0.0, ARRIVAL_TIME])


@pytest.fixture
def acceptance_log():
    def log(number, passed, detail):
        line = f"criterion {number!s:>3}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def _criterion_key(line):
    label = line.split()[1].rstrip(":")
    return int(re.match(r"\d+", label).group()), label


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=_criterion_key):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
