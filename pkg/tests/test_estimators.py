import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_psd
from kernel_sps.errors import ConfigError, ConvergenceWarning, DataError, NumericalError
from kernel_sps.estimators import (
    CanonicalLS,
    klasso_estimate,
    klasso_objective,
    klasso_subgradient,
    klasso_z,
    krr_canonical,
    krr_objective,
    ls_estimate,
    lssvc_canonical,
    lssvc_objective,
    lssvc_predict,
    svr_estimate,
    svr_objective,
    svr_subgradient,
    svr_wolfe_dual,
    svr_z,
)
from kernel_sps.kernels import GramMatrix
from kernel_sps.perturbation import Transform

IDENT1 = Transform.signs([1.0])
FLIP1 = Transform.signs([-1.0])


def test_krr_canonical_one_point():
    c = krr_canonical(GramMatrix.from_matrix([[1.0]]), [2.0], 1.0)
    np.testing.assert_allclose(c.regressor, [[1.0], [1.0]])
    np.testing.assert_allclose(c.target, [2.0, 0.0])
    assert (c.n_real, c.n_aug) == (1, 1)
    assert ls_estimate(c) == pytest.approx([1.0])


def test_krr_hessian_expansion(fig2_gram):
    k = fig2_gram.entries
    w = np.linspace(0.5, 2.0, 20)
    c = krr_canonical(fig2_gram, np.zeros(20), 0.3, weights=w)
    expected = k @ np.diag(w) @ k / 20 + 0.3 * k
    np.testing.assert_allclose(c.hessian, expected, atol=1e-12 * np.abs(expected).max())
    assert np.all(c.hessian_eigenvalues > 0)


def test_krr_ridge_limit():
    x = np.linspace(0, 10, 6)
    k = np.exp(-np.subtract.outer(x, x) ** 2 / 2.0)
    y = np.sin(x)
    alpha = ls_estimate(krr_canonical(GramMatrix.from_matrix(k), y, 1e-10))
    np.testing.assert_allclose(k @ alpha, y, atol=1e-4)


def test_krr_validation(fig2_gram):
    with pytest.raises(ConfigError):
        krr_canonical(fig2_gram, np.zeros(20), 0.0)
    with pytest.raises(ConfigError):
        krr_canonical(fig2_gram, np.zeros(20), 0.1, weights=np.r_[0.0, np.ones(19)])
    with pytest.raises(DataError):
        krr_canonical(fig2_gram, np.zeros(19), 0.1)
    with pytest.raises(NumericalError):
        krr_canonical(GramMatrix.from_matrix(np.ones((3, 3))), np.zeros(3), 0.1)


def test_ls_estimate_examples():
    c = CanonicalLS(np.array([[1.0], [1.0]]), np.array([1.0, 3.0]), 2, 0)
    assert ls_estimate(c) == pytest.approx([2.0])
    with pytest.raises(NumericalError):
        ls_estimate(CanonicalLS(np.ones((3, 2)), np.zeros(3), 3, 0))
    with pytest.raises(DataError):
        CanonicalLS(np.ones((3, 2)), np.zeros(3), 2, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), rows=st.integers(3, 30), cols=st.integers(1, 3))
def test_ls_estimate_normal_equations(seed, rows, cols):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((rows, cols))
    z = rng.standard_normal(rows)
    c = CanonicalLS(phi, z, rows, 0)
    a = ls_estimate(c)
    assert np.linalg.norm(phi.T @ (z - phi @ a)) <= 1e-8 * max(np.linalg.norm(phi.T @ z), 1e-300) + 1e-12


def test_lssvc_symmetry():
    c = lssvc_canonical([[1.0], [-1.0]], [1, -1], 1.0)
    a = ls_estimate(c)
    assert a[0] == pytest.approx(0.0, abs=1e-12)
    assert (c.n_real, c.n_aug) == (2, 2)
    assert lssvc_predict([[2.0], [-3.0]], a).tolist() == [1.0, -1.0]
    np.testing.assert_array_equal(lssvc_predict([[0.3]], a), lssvc_predict([[0.3]], 7.5 * a))


def test_lssvc_validation():
    with pytest.raises(DataError):
        lssvc_canonical([[1.0], [2.0]], [1, 0], 1.0)
    # the bias column is sqrt(lam) * y and the B block covers w, so even
    # coincident inputs give a full-rank regressor
    assert lssvc_canonical([[1.0], [1.0]], [1, -1], 1.0).full_column_rank()
    with pytest.raises(ConfigError):
        lssvc_canonical([[1.0], [2.0]], [1, -1], -1.0)


def _constant_difference(canonical_fn, direct_fn, dim, rng):
    diffs, objs = [], []
    for _ in range(100):
        a = rng.standard_normal(dim)
        direct = direct_fn(a)
        diffs.append(canonical_fn(a) - direct)
        objs.append(direct)
    return np.var(diffs) / np.mean(objs) ** 2


def test_krr_canonical_matches_objective(fig2_sample, fig2_gram):
    rng = np.random.default_rng(0)
    c = krr_canonical(fig2_gram, fig2_sample.outputs, 0.1)
    rel = _constant_difference(c.objective,
                               lambda a: krr_objective(fig2_gram, fig2_sample.outputs, a, 0.1), 20, rng)
    assert rel <= 1e-12


def test_lssvc_canonical_matches_objective():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((30, 2))
    y = np.where(rng.random(30) < 0.5, -1.0, 1.0)
    c = lssvc_canonical(x, y, 0.1)
    rel = _constant_difference(c.objective, lambda a: lssvc_objective(x, y, a, 0.1), 3, rng)
    assert rel <= 1e-12


def test_svr_z_examples():
    k = [[1.0]]
    assert svr_z(k, [1.0], [0.5], 0.2, IDENT1) == pytest.approx(0.09)
    assert svr_z(k, [1.0], [0.5], 0.2, FLIP1) == pytest.approx(0.49)
    rng = np.random.default_rng(2)
    kk = random_psd(rng, 5)
    y, a = rng.standard_normal(5), rng.standard_normal(5)
    ident = Transform.signs(np.ones(5))
    assert svr_z(kk, y, a, 0.0, ident) == pytest.approx(np.sum((y - kk @ a) ** 2))
    with pytest.raises(DataError):
        svr_z(kk, y, a[:4], 0.1, ident)


def test_klasso_z_examples():
    assert klasso_z([[2.0]], [3.0], [1.0], 1.0, IDENT1) == pytest.approx(1.0)
    assert klasso_z([[2.0]], [3.0], [1.0], 1.0, FLIP1) == pytest.approx(9.0)
    rng = np.random.default_rng(3)
    k = random_psd(rng, 4)
    y = rng.standard_normal(4)
    ident = Transform.signs(np.ones(4))
    assert klasso_z(k, y, np.zeros(4), 0.5, ident) == pytest.approx(np.sum((k @ y) ** 2))


def test_z_equals_squared_subgradient():
    rng = np.random.default_rng(4)
    k = random_psd(rng, 6)
    y, a = rng.standard_normal(6), rng.standard_normal(6)
    ident = Transform.signs(np.ones(6))
    assert svr_z(k, y, a, 0.3, ident) == pytest.approx(np.sum(svr_subgradient(k, y, a, 0.3) ** 2))
    assert klasso_z(k, y, a, 0.7, ident) == pytest.approx(np.sum(klasso_subgradient(k, y, a, 0.7) ** 2))


def _kink_free(rng, n):
    a = rng.standard_normal(n)
    return np.sign(a) * np.maximum(np.abs(a), 0.01)


def _central_diff(f, a, h=1e-6):
    out = np.empty_like(a)
    for i in range(a.size):
        e = np.zeros_like(a)
        e[i] = h
        out[i] = (f(a + e) - f(a - e)) / (2 * h)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_subgradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k = random_psd(rng, 6) / 6
    y = rng.standard_normal(6)
    for _ in range(20):
        a = _kink_free(rng, 6)
        g = klasso_subgradient(k, y, a, 0.4)
        fd = _central_diff(lambda v: klasso_objective(k, y, v, 0.4), a)
        assert np.max(np.abs(fd - g)) <= 1e-6 * max(np.max(np.abs(g)), 1.0)
        g = svr_subgradient(k, y, a, 0.2)
        fd = _central_diff(lambda v: svr_objective(k, y, v, 0.2), a)
        assert np.max(np.abs(fd - g)) <= 1e-6 * max(np.max(np.abs(g)), 1.0)
        assert svr_objective(k, y, a, 0.2) == pytest.approx(
            svr_wolfe_dual(k, y, np.maximum(a, 0), np.maximum(-a, 0), 0.2))


def test_klasso_zero_threshold(fig2_sample, fig2_gram):
    lam = 1.01 * np.max(np.abs(fig2_gram.entries.T @ fig2_sample.outputs))
    np.testing.assert_array_equal(klasso_estimate(fig2_gram, fig2_sample.outputs, lam), 0.0)


def test_klasso_unregularized_limit():
    x = np.linspace(0, 4, 5)
    k = np.exp(-np.subtract.outer(x, x) ** 2 / 2.0)
    y = np.cos(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        a = klasso_estimate(k, y, 1e-10, max_iter=200_000, tol=1e-14)
    np.testing.assert_allclose(k @ a, y, atol=1e-3)


def test_klasso_local_optimality_and_monotone(fig2_sample, fig2_gram):
    y = fig2_sample.outputs
    a, info = klasso_estimate(fig2_gram, y, 1.0, return_info=True)
    assert info.converged
    obj = np.array(info.objective)
    assert np.all(np.diff(obj) <= 1e-12 * np.abs(obj[:-1]).max())
    f0 = klasso_objective(fig2_gram, y, a, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = rng.standard_normal(20)
        assert klasso_objective(fig2_gram, y, a + 1e-3 * d / np.linalg.norm(d), 1.0) >= f0 - 1e-12


def test_klasso_reports_non_convergence(fig2_sample, fig2_gram):
    with pytest.warns(ConvergenceWarning):
        klasso_estimate(fig2_gram, fig2_sample.outputs, 1.0, max_iter=3)


def test_svr_large_eps_gives_zero(fig2_sample, fig2_gram):
    eps = 1.1 * np.max(np.abs(fig2_sample.outputs))
    np.testing.assert_array_equal(svr_estimate(fig2_gram, fig2_sample.outputs, eps, 250.0), 0.0)


def test_svr_feasibility_and_optimality(fig2_sample, fig2_gram):
    y = fig2_sample.outputs
    n, c, eps = 20, 250.0, 0.2
    a, ap, am, info = svr_estimate(fig2_gram, y, eps, c, return_info=True)
    assert info.converged
    assert np.all((ap >= 0) & (ap <= c / n)) and np.all((am >= 0) & (am <= c / n))
    assert abs(np.sum(ap - am)) <= 1e-10
    obj = np.array(info.objective)
    assert np.all(np.diff(obj) >= -1e-12 * np.abs(obj).max())
    best = svr_wolfe_dual(fig2_gram, y, ap, am, eps)
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.uniform(0, c / n, n)
        q = rng.permutation(p)  # equal sums, inside the box
        assert svr_wolfe_dual(fig2_gram, y, p, q, eps) <= best + 1e-9


def test_svr_validation(fig2_gram):
    with pytest.raises(ConfigError):
        svr_estimate(fig2_gram, np.zeros(20), -1.0, 1.0)
    with pytest.raises(ConfigError):
        svr_estimate(fig2_gram, np.zeros(20), 0.1, 0.0)
