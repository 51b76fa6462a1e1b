import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats as sps

from lipshare.errors import InsufficientData, ZeroVariance
from lipshare.stats import betainc, t_two_sided_p, welch_t_test


def test_identical_samples():
    r = welch_t_test([1, 2, 3], [1, 2, 3])
    assert r.t == 0.0 and r.p == 1.0


def test_hand_formula():
    r = welch_t_test([1, 2, 3], [4, 5, 6])
    # mean diff -3, variances 1 and 1, se = sqrt(2/3)
    assert r.t == pytest.approx(-3 / math.sqrt(2 / 3), abs=1e-12)
    assert r.dof == pytest.approx(4.0, abs=1e-12)
    assert r.p == pytest.approx(0.0213, abs=1e-4)


def test_degenerate_inputs():
    with pytest.raises(ZeroVariance):
        welch_t_test([0, 0], [0, 0])
    with pytest.raises(InsufficientData):
        welch_t_test([1], [1, 2])


def test_one_constant_sample_is_fine():
    r = welch_t_test([0, 0, 0], [1, 2, 3])
    assert r.dof > 0 and 0 < r.p < 1


@pytest.mark.parametrize("a, b, x", [(0.5, 0.5, 0.3), (2.0, 0.5, 0.9), (50.0, 0.5, 0.99), (1e3, 0.5, 0.2),
                                     (3.5, 0.5, 1e-8), (0.5, 0.5, 1 - 1e-12)])
def test_betainc_against_scipy(a, b, x):
    assert betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-10, abs=1e-300)


@given(st.floats(-50, 50), st.floats(0.5, 500))
def test_t_tail_against_scipy(t, dof):
    ref = 2 * sps.t.sf(abs(t), dof)
    assert t_two_sided_p(t, dof) == pytest.approx(ref, rel=1e-8, abs=1e-14)


@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(2, 30), st.floats(-3, 3))
def test_welch_matches_scipy(seed, n, m, shift):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    b = rng.normal(loc=shift, scale=2.0, size=m)
    r = welch_t_test(a, b)
    ref = sps.ttest_ind(a, b, equal_var=False)
    assert r.t == pytest.approx(ref.statistic, rel=1e-10)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-8, abs=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_swap_symmetry(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=7), rng.normal(1.0, 3.0, size=12)
    ab, ba = welch_t_test(a, b), welch_t_test(b, a)
    assert ab.t == -ba.t
    assert ab.p == ba.p and ab.dof == ba.dof


def test_p_decreases_with_separation():
    base = np.random.default_rng(0).normal(size=20)
    ps = [welch_t_test(base, base + s).p for s in np.linspace(0, 3, 13)]
    assert ps[0] == 1.0
    assert all(x > y for x, y in zip(ps, ps[1:]))


def test_p_floor_keeps_p_positive():
    r = welch_t_test(np.arange(500.0) * 1e-3, 1e3 + np.arange(500.0) * 1e-3)
    assert 0 < r.p <= 1e-300
