import numpy as np
import pytest

from mzical.mesh import (
    AnalyticalParams,
    VirtualChipParams,
    bundled_fixture_path,
    default_crossbar_topology,
    load_params,
)


@pytest.fixture(scope="session")
def crossbar_chip() -> VirtualChipParams:
    return load_params(bundled_fixture_path("crossbar3x3"))


@pytest.fixture(scope="session")
def splittree_chip() -> VirtualChipParams:
    return load_params(bundled_fixture_path("splittree3x3"))


@pytest.fixture(scope="session")
def am_form_chip(crossbar_chip) -> VirtualChipParams:
    """The bundled chip with every mismatch term zeroed (exact model form)."""
    base = crossbar_chip.base
    n = base.topology.n_mzi
    return VirtualChipParams(
        base=base,
        er_db_per_mzi=np.full(n, base.er_db),
        phi4=np.zeros(n),
        noise_sigma_db=0.0,
    )


def make_small_params(seed: int = 0, n: int = 2) -> AnalyticalParams:
    """Random but valid 2x2 model for fast unit tests."""
    rng = np.random.default_rng(seed)
    topo = default_crossbar_topology(n)
    m = topo.n_mzi
    phi2 = rng.uniform(-0.05, 0.05, size=(m, m))
    phi2[np.arange(m), np.arange(m)] = rng.uniform(0.6, 0.9, size=m)
    return AnalyticalParams(
        topology=topo,
        alpha_db=-rng.uniform(0.5, 4.0, size=topo.shape),
        er_db=float(rng.uniform(18.0, 30.0)),
        phi0=rng.uniform(0.0, 2.0 * np.pi, size=m),
        phi2=phi2,
    )


@pytest.fixture
def small_params() -> AnalyticalParams:
    return make_small_params()
