import pytest

from kernel_sps.coverage import EstimatorSpec, assemble
from kernel_sps.data import NoiseSpec, generate_synthetic
from kernel_sps.estimators import krr_canonical
from kernel_sps.kernels import KernelSpec, gram_matrix


@pytest.fixture(scope="session")
def gaussian_half():
    return KernelSpec.gaussian(0.5)


@pytest.fixture(scope="session")
def fig2_sample():
    """x sin x on 20 equidistant points in [0, 10], Laplace(0, 1/2) noise."""
    return generate_synthetic("x_sin_x", 20, (0.0, 10.0), NoiseSpec.laplace(0.0, 0.5), 1)


@pytest.fixture(scope="session")
def fig2_gram(fig2_sample, gaussian_half):
    return gram_matrix(gaussian_half, fig2_sample.inputs)


@pytest.fixture(scope="session")
def krr_small():
    """A well-conditioned 8-point KRR canonical form."""
    s = generate_synthetic("x_sin_x", 8, (0.0, 10.0), NoiseSpec.laplace(0.0, 0.5), 3)
    g = gram_matrix(KernelSpec.gaussian(1.0), s.inputs)
    return krr_canonical(g, s.outputs, 0.1)


@pytest.fixture(scope="session")
def krr_built(fig2_sample, gaussian_half):
    return assemble(EstimatorSpec.parse("krr:lambda=0.1"), fig2_sample, gaussian_half)


def random_psd(rng, n, rank=None):
    a = rng.standard_normal((n, rank or n))
    return a @ a.T
