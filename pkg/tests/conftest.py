from __future__ import annotations

import numpy as np
import pytest

from spectral_edgeworth import config as cfgmod
from spectral_edgeworth.models import MarkovSftSpec, build_model


def load_bundled(name: str):
    return cfgmod.load_config(cfgmod.bundled_config_path(name))


def bundled_model(name: str):
    return build_model(load_bundled(name).model)


@pytest.fixture(scope="session")
def chain2():
    """Aperiodic 2-state chain with integer observable in {-1, 0, 1}."""
    return bundled_model("chain2_lattice.cfg")


@pytest.fixture(scope="session")
def chain3():
    """Skewed 3-state non-lattice chain."""
    return bundled_model("chain3_skewed.cfg")


@pytest.fixture(scope="session")
def chain3_cfg():
    return load_bundled("chain3_skewed.cfg")


@pytest.fixture(scope="session")
def doubling():
    return bundled_model("doubling_cos.cfg")


@pytest.fixture(scope="session")
def fair_coin():
    return build_model(MarkovSftSpec.iid([-1.0, 1.0], [0.5, 0.5], lattice=True))


@pytest.fixture(scope="session")
def bern03():
    return build_model(MarkovSftSpec.iid([0.0, 1.0], [0.7, 0.3], lattice=True))


@pytest.fixture(scope="session")
def rmp():
    return bundled_model("rmp_shear_diag.cfg")


def max_abs(a) -> float:
    return float(np.max(np.abs(np.asarray(a))))
