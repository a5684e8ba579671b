import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from kernel_sps.errors import ConfigError, DataError
from kernel_sps.perturbation import (
    Transform,
    TransformGroup,
    apply,
    draw_perturbations,
)

SIGN = TransformGroup.sign_change()
PERM = TransformGroup.permutation()

vectors = st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12).map(np.array)


def test_identity_first_and_shapes():
    ps = draw_perturbations(SIGN, 3, 2, seed=0)
    assert ps.m == 3 and ps.dim == 2 and len(ps) == 3
    assert ps.elements[0].tolist() == [1.0, 1.0]
    assert set(np.unique(ps.elements[1:])) <= {-1.0, 1.0}
    assert sorted(ps.tie_order.tolist()) == [0, 1, 2]
    pp = draw_perturbations(PERM, 5, 4, seed=0)
    assert pp.elements[0].tolist() == [0, 1, 2, 3]


def test_m_below_two_rejected():
    with pytest.raises(ConfigError):
        draw_perturbations(SIGN, 1, 3, 0)


def test_sign_vectors_uniform_over_seeds():
    counts = {}
    n_seeds = 100_000
    for seed in range(n_seeds):
        key = tuple(draw_perturbations(SIGN, 2, 2, seed).elements[1])
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 4
    for c in counts.values():
        assert abs(c / n_seeds - 0.25) <= 0.01


def test_permutations_uniform():
    ps = draw_perturbations(PERM, 24_001, 3, seed=4)
    counts = {}
    for row in ps.elements[1:]:
        counts[tuple(row)] = counts.get(tuple(row), 0) + 1
    assert len(counts) == 6
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_tie_order_uniform_position():
    # position of Z_0's priority is uniform over seeds
    pos = [int(draw_perturbations(SIGN, 5, 2, s).tie_order[0]) for s in range(5000)]
    assert stats.chisquare(np.bincount(pos, minlength=5)).pvalue > 0.001


def test_draw_depends_only_on_key():
    a = draw_perturbations(SIGN, 10, 6, 9)
    b = draw_perturbations(SIGN, 10, 6, 9)
    assert np.array_equal(a.elements, b.elements) and np.array_equal(a.tie_order, b.tie_order)
    c = draw_perturbations(SIGN, 10, 6, 10)
    assert not np.array_equal(a.elements, c.elements)
    with pytest.raises(ValueError):
        a.elements[0, 0] = -1.0


def test_block_group_keeps_tail():
    g = TransformGroup.block(SIGN, 3)
    ps = draw_perturbations(g, 50, 7, 1)
    assert ps.fixed_tail == 3 and ps.head == 4 and ps.elements.shape == (50, 4)
    v = np.arange(1.0, 8.0)
    out = ps.apply_all(v)
    assert np.all(out[:, 4:] == v[4:])
    assert np.any(out[:, :4] != v[:4])
    for i in range(50):
        assert np.array_equal(apply(ps[i], v), out[i])
    gp = TransformGroup.block(PERM, 2)
    pp = draw_perturbations(gp, 20, 6, 1)
    assert np.all(pp.apply_all(v[:6])[:, 4:] == v[4:6])


def test_block_group_validation():
    with pytest.raises(ConfigError):
        TransformGroup.block(TransformGroup.block(SIGN, 1), 1)
    with pytest.raises(ConfigError):
        TransformGroup.block(SIGN, 3).head_dim(3)


def test_apply_examples():
    np.testing.assert_array_equal(apply(Transform.signs([1, -1, 1]), [1, 2, 3]), [1, -2, 3])
    # gather convention: output i takes input perm[i]; one-based perm (2, 3, 1)
    np.testing.assert_array_equal(apply(Transform.perm([1, 2, 0]), [1, 2, 3]), [2, 3, 1])
    with pytest.raises(DataError):
        apply(Transform.signs([1, -1]), [1, 2, 3])
    with pytest.raises(ConfigError):
        Transform.signs([1, 0])
    with pytest.raises(ConfigError):
        Transform.perm([0, 0, 1])


@settings(max_examples=60, deadline=None)
@given(v=vectors, seed=st.integers(0, 2**32))
def test_norm_preserved_and_sign_involution(v, seed):
    n = v.size
    for group in (SIGN, PERM):
        t = draw_perturbations(group, 2, n, seed)[1]
        w = apply(t, v)
        assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-12, abs=1e-300)
    t = draw_perturbations(SIGN, 2, n, seed)[1]
    assert np.array_equal(apply(t, apply(t, v)), v)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 9), seed=st.integers(0, 2**32))
def test_permutation_composition_closed(n, seed):
    ps = draw_perturbations(PERM, 3, n, seed)
    a, b = ps[1], ps[2]
    c = a.compose(b)
    assert sorted(c.data.tolist()) == list(range(n))
    v = np.random.default_rng(seed).standard_normal(n)
    np.testing.assert_array_equal(apply(c, v), apply(a, apply(b, v)))


def test_sign_composition():
    a, b = Transform.signs([1, -1, -1]), Transform.signs([-1, -1, 1])
    v = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(apply(a.compose(b), v), apply(a, apply(b, v)))


def test_distributional_invariance_smoke():
    rng = np.random.default_rng(0)
    n = 10
    ps_sign = draw_perturbations(SIGN, 10_001, n, 3)
    ps_perm = draw_perturbations(PERM, 10_001, n, 3)
    sym = rng.laplace(0.0, 1.0, size=(10_000, n))
    skew = rng.exponential(1.0, size=(10_000, n))
    out_sign = np.array([apply(ps_sign[i + 1], sym[i]) for i in range(10_000)])
    out_perm = np.array([apply(ps_perm[i + 1], skew[i]) for i in range(10_000)])
    assert stats.ks_2samp(sym.ravel(), out_sign.ravel()).pvalue > 0.01
    assert stats.ks_2samp(skew.ravel(), out_perm.ravel()).pvalue > 0.01
    # a skewed law is not sign invariant: the smoke test can fail
    flipped = np.array([apply(ps_sign[i + 1], skew[i]) for i in range(10_000)])
    assert stats.ks_2samp(skew.ravel(), flipped.ravel()).pvalue < 1e-6


def test_group_parse():
    assert TransformGroup.parse("sign") == SIGN
    assert TransformGroup.parse("perm") == PERM
    with pytest.raises(ConfigError):
        TransformGroup.parse("rotation")
