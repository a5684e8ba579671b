import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernel_sps.errors import ConfigError, DataError, NumericalError
from kernel_sps.kernels import (
    GramMatrix,
    KernelSpec,
    check_strict_pd,
    eval_kernel,
    gram_matrix,
    kernel_matrix,
    psd_inv_sqrt,
    psd_sqrt,
    require_strict_pd,
)

from conftest import random_psd

ALL_KERNELS = [
    KernelSpec.gaussian(0.7),
    KernelSpec.laplacian(0.5),
    KernelSpec.polynomial(1.0, 3),
    KernelSpec.linear(),
    KernelSpec.sigmoidal(0.5, 1.0),
    KernelSpec.truncated_parabolic(1.0),
    KernelSpec.rectangular(0.3),
]
PSD_KERNELS = [k for k in ALL_KERNELS if k.psd_family]


def test_gaussian_values():
    k = KernelSpec.gaussian(1.0)
    assert eval_kernel(k, 0.0, 0.0) == 1.0
    assert eval_kernel(k, 0.0, 1.0) == pytest.approx(math.exp(-0.5), rel=1e-15)
    assert eval_kernel(k, 0.0, 1.0) == pytest.approx(0.606531, abs=1e-6)


def test_compact_support_kernels():
    assert eval_kernel(KernelSpec.rectangular(0.5), 0.0, 2.0) == 0.0
    assert eval_kernel(KernelSpec.truncated_parabolic(1.0), 0.0, 2.0) == 0.0
    assert eval_kernel(KernelSpec.truncated_parabolic(1.0), 0.0, 0.5) == pytest.approx(0.75)
    # the indicator includes its boundary
    assert eval_kernel(KernelSpec.rectangular(0.5), 0.0, 0.5) == 1.0


def test_other_families():
    z, s = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    assert eval_kernel(KernelSpec.laplacian(2.0), z, s) == pytest.approx(
        math.exp(-np.linalg.norm(z - s) / 2.0))
    assert eval_kernel(KernelSpec.polynomial(1.0, 2), z, s) == pytest.approx((z @ s + 1.0) ** 2)
    assert eval_kernel(KernelSpec.linear(), z, s) == pytest.approx(z @ s)
    assert eval_kernel(KernelSpec.sigmoidal(0.5, 1.0), z, s) == pytest.approx(math.tanh(0.5 * z @ s + 1.0))


def test_dimension_mismatch():
    with pytest.raises(DataError):
        eval_kernel(KernelSpec.gaussian(1.0), [0.0, 1.0], [0.0])


@pytest.mark.parametrize("text, family, params", [
    ("gaussian:sigma=0.5", "gaussian", (0.5,)),
    ("polynomial:c=1,p=2", "polynomial", (1.0, 2)),
    ("rectangular:c=0.02631578947368421", "rectangular", (1 / 38,)),
    ("linear", "polynomial", (0.0, 1)),
    ("truncated-parabolic:c=1", "truncated_parabolic", (1.0,)),
])
def test_parse(text, family, params):
    k = KernelSpec.parse(text)
    assert k.family == family and k.params == pytest.approx(params)
    assert KernelSpec.parse(k.describe()) == k


@pytest.mark.parametrize("bad", [
    lambda: KernelSpec.gaussian(0.0),
    lambda: KernelSpec.laplacian(-1.0),
    lambda: KernelSpec.polynomial(-1.0, 2),
    lambda: KernelSpec.polynomial(1.0, 1.5),
    lambda: KernelSpec.sigmoidal(-1.0, 0.0),
    lambda: KernelSpec.rectangular(0.0),
    lambda: KernelSpec.parse("gaussian"),
    lambda: KernelSpec.parse("cosine:a=1"),
])
def test_invalid_specs(bad):
    with pytest.raises(ConfigError):
        bad()


@pytest.mark.parametrize("kernel", ALL_KERNELS, ids=lambda k: k.family)
@settings(max_examples=40, deadline=None)
@given(z=st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       s=st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_symmetry_is_exact(kernel, z, s):
    assert eval_kernel(kernel, z, s) == eval_kernel(kernel, s, z)


def test_gram_examples():
    g = gram_matrix(KernelSpec.gaussian(1.0), [0.0])
    assert g.entries.tolist() == [[1.0]] and g.min_eigenvalue == pytest.approx(1.0)
    g = gram_matrix(KernelSpec.gaussian(1.0), [0.0, 1.0])
    e = math.exp(-0.5)
    np.testing.assert_allclose(g.entries, [[1, e], [e, 1]], rtol=1e-15)
    assert g.min_eigenvalue == pytest.approx(1 - e, rel=1e-12)
    g = gram_matrix(KernelSpec.rectangular(1 / 38), [0.0, 2.0, 4.0])
    assert np.array_equal(g.entries, np.eye(3))


@pytest.mark.parametrize("kernel", ALL_KERNELS, ids=lambda k: k.family)
def test_gram_entries_match_pointwise(kernel):
    x = np.random.default_rng(0).uniform(-2, 2, size=(6, 2))
    g = gram_matrix(kernel, x)
    assert np.array_equal(g.entries, g.entries.T)
    for i in range(6):
        for j in range(6):
            assert g.entries[i, j] == eval_kernel(kernel, x[i], x[j])


@pytest.mark.parametrize("kernel", PSD_KERNELS, ids=lambda k: k.family)
def test_gram_is_psd(kernel):
    rng = np.random.default_rng(1)
    for _ in range(5):
        g = gram_matrix(kernel, rng.uniform(-3, 3, size=(25, 1)))
        assert g.min_eigenvalue >= -1e-10 * g.max_eigenvalue


def test_strict_pd_examples():
    assert check_strict_pd(GramMatrix.from_matrix(np.eye(3)), 1e-10).strictly_pd
    lin = gram_matrix(KernelSpec.linear(), [1.0, 2.0])
    d = check_strict_pd(lin, 1e-10)
    assert not d.strictly_pd and abs(d.min_eigenvalue) < 1e-12
    assert check_strict_pd(gram_matrix(KernelSpec.gaussian(1.0), np.linspace(0, 4, 5))).strictly_pd
    with pytest.raises(NumericalError):
        require_strict_pd(lin)


def test_sigmoidal_needs_override():
    g = gram_matrix(KernelSpec.sigmoidal(0.1, 0.0), [0.5, 1.0, 2.0])
    assert not g.psd_family and g.needs_override
    with pytest.raises(NumericalError, match="sigmoidal"):
        require_strict_pd(g)
    # rank one here, so the override alone does not make it strictly PD
    with pytest.raises(NumericalError, match="strictly positive definite"):
        require_strict_pd(g, allow_non_psd_family=True)


@pytest.mark.parametrize("kernel", [KernelSpec.truncated_parabolic(1.0), KernelSpec.rectangular(1.0)],
                         ids=lambda k: k.family)
def test_compact_kernels_are_not_psd_in_general(kernel):
    assert not kernel.psd_family and not kernel.needs_override
    g = gram_matrix(kernel, np.arange(20) * 10 / 19)
    if kernel.family == "truncated_parabolic":
        # the 20-point, c = 1 design used for the kernel comparison is indefinite
        assert g.min_eigenvalue < -0.1
    g = gram_matrix(kernel, [0.0, 0.9, 1.8])
    if kernel.family == "rectangular":
        # [[1,1,0],[1,1,1],[0,1,1]] has eigenvalue 1 - sqrt(2)
        assert g.min_eigenvalue == pytest.approx(1 - math.sqrt(2))


def test_compact_kernel_accepted_when_numerically_pd():
    require_strict_pd(gram_matrix(KernelSpec.rectangular(1 / 38), np.arange(20) * 10 / 19))


@pytest.mark.parametrize("n, sigma", [(20, 0.5), (50, 1.0), (200, 0.1), (200, 1.0), (30, 10.0)])
def test_gaussian_strict_pd_on_separated_inputs(n, sigma):
    # gaps between sigma and 2 sigma keep the Gram well inside double precision
    rng = np.random.default_rng(n)
    x = np.cumsum(sigma * rng.uniform(1.0, 2.0, size=n)) if sigma < 10 else \
        np.cumsum(rng.uniform(1.0, 2.0, size=n))
    if sigma == 10.0:
        x = x * 10.0
    assert check_strict_pd(gram_matrix(KernelSpec.gaussian(sigma), x)).strictly_pd


def test_psd_sqrt_examples():
    np.testing.assert_array_equal(psd_sqrt(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), rtol=1e-14)
    m = random_psd(np.random.default_rng(2), 5)
    s = psd_sqrt(m)
    assert np.linalg.norm(s @ s - m) / np.linalg.norm(m) <= 1e-10
    assert np.array_equal(s, s.T)


@pytest.mark.parametrize("n", [3, 40, 200])
def test_psd_sqrt_reconstruction_rank_deficient(n):
    m = random_psd(np.random.default_rng(n), n, rank=max(1, n // 2))
    s = psd_sqrt(m)
    assert np.linalg.norm(s @ s - m) <= 1e-9 * (1 + np.linalg.norm(m))


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(NumericalError):
        psd_sqrt(np.diag([1.0, -0.5]))
    with pytest.raises(DataError):
        psd_sqrt(np.array([[1.0, 0.2], [0.1, 1.0]]))


def test_psd_inv_sqrt():
    m = random_psd(np.random.default_rng(3), 6)
    p = psd_inv_sqrt(m)
    np.testing.assert_allclose(p @ m @ p, np.eye(6), atol=1e-10)
    with pytest.raises(NumericalError):
        psd_inv_sqrt(np.diag([1.0, 0.0]))


def test_kernel_matrix_rectangular_shape():
    k = kernel_matrix(KernelSpec.gaussian(1.0), np.zeros((4, 1)), np.ones((3, 1)))
    assert k.shape == (4, 3)
