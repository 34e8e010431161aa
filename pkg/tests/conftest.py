import numpy as np
import pytest

from asymgemm import kernels
from asymgemm.model import CacheConfig, ClusterSpec, CoreClass, Topology


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # first call compiles the jitted kernels (cached on disk afterwards)
    kernels.warm_up()


def small_cluster(core_class=CoreClass.FAST, cores=2, l2=2 * 1024 * 1024,
                  n_c=16, k_c=12, m_c=8, slowdown=1.0):
    cfg = CacheConfig(n_c=n_c, k_c=k_c, m_c=m_c, m_r=4, n_r=4)
    return ClusterSpec(core_class, cores, 32 * 1024, l2, cfg, slowdown)


@pytest.fixture
def duo_topology():
    """Two clusters x 2 cores with tiny blocking so small problems are
    ragged in every dimension."""
    fast = small_cluster(CoreClass.FAST, cores=2, n_c=16, k_c=12, m_c=8)
    slow = small_cluster(CoreClass.SLOW, cores=2, l2=512 * 1024,
                         n_c=16, k_c=12, m_c=8)
    return Topology((fast, slow))


@pytest.fixture
def solo_topology():
    return Topology((small_cluster(cores=4),))


def random_matrix(rng, m, n):
    from asymgemm.model import Matrix
    return Matrix.from_2d(rng.standard_normal((m, n)))
