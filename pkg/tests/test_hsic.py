import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualhsic.hsic import (
    DegenerateBatchError,
    KernelConfig,
    KernelConfigError,
    empirical_hsic,
    hsic_gradient_wrt_first,
    kernel_matrix,
    one_hot,
    permutation_null_quantile,
)
from dualhsic.numerics import ShapeError, make_rng

from conftest import central_difference, rel_err

G5 = KernelConfig(5.0)


def hsic_by_definition(x, y, cx=G5, cy=G5):
    """Literal oracle: explicit centring matrix and a full matrix product."""
    n = len(x)
    h = np.eye(n) - np.ones((n, n)) / n
    return np.trace(kernel_matrix(x, cx) @ h @ kernel_matrix(y, cy) @ h) / (n - 1) ** 2


def test_kernel_config_rejects_bad_sigma():
    with pytest.raises(KernelConfigError):
        KernelConfig(0.0)
    with pytest.raises(KernelConfigError):
        KernelConfig(-1.0)
    with pytest.raises(KernelConfigError):
        KernelConfig(1.0, kind="laplace")


def test_kernel_matrix_examples():
    np.testing.assert_array_equal(kernel_matrix(np.ones((3, 2)), G5), np.ones((3, 3)))
    k = kernel_matrix([[0.0, 0.0], [3.0, 4.0]], G5)
    assert k[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert k[0, 1] == pytest.approx(0.60653, abs=1e-5)
    np.testing.assert_array_equal(np.diag(k), [1.0, 1.0])
    np.testing.assert_array_equal(kernel_matrix(np.eye(4), KernelConfig(kind="linear")), np.eye(4))


def test_constant_y_gives_exact_zero(rng):
    x = rng.normal(size=(9, 3))
    y = np.tile([[0.3, -1.2]], (9, 1))
    assert empirical_hsic(x, y, G5, G5).value == 0.0


def test_two_sample_closed_form():
    x = np.array([[0.0], [1.0]])
    y = np.array([[0.0, 0.0], [3.0, 4.0]])
    a = np.exp(-1.0 / 50.0)
    b = np.exp(-25.0 / 50.0)
    value = empirical_hsic(x, y).value
    assert value == pytest.approx((1 - a) * (1 - b), abs=1e-12)
    assert value == pytest.approx(hsic_by_definition(x, y), abs=1e-12)


def test_two_sample_self_dependence():
    x = np.array([[0.0], [1.0]])
    assert empirical_hsic(x, x).value == pytest.approx((1 - np.exp(-0.02)) ** 2, abs=1e-15)
    assert empirical_hsic(x, x).value == pytest.approx(3.9208e-4, rel=1e-4)


@pytest.mark.parametrize("n,dx,dy", [(3, 1, 1), (8, 3, 2), (16, 5, 10)])
def test_matches_explicit_centring(rng, n, dx, dy):
    x = rng.normal(size=(n, dx)) * 3
    y = rng.normal(size=(n, dy)) * 3
    assert empirical_hsic(x, y).value == pytest.approx(hsic_by_definition(x, y), abs=1e-12)
    lin = KernelConfig(kind="linear")
    assert empirical_hsic(x, y, lin, G5).value == pytest.approx(hsic_by_definition(x, y, lin, G5), abs=1e-10)


def test_errors():
    with pytest.raises(DegenerateBatchError):
        empirical_hsic(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ShapeError):
        empirical_hsic(np.ones((3, 2)), np.ones((4, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_symmetry_nonnegativity_permutation(n, dx, dy, seed):
    rng = make_rng(seed)
    x = rng.normal(size=(n, dx)) * rng.uniform(0.1, 10)
    y = rng.normal(size=(n, dy)) * rng.uniform(0.1, 10)
    v = empirical_hsic(x, y).value
    assert v == pytest.approx(empirical_hsic(y, x).value, abs=1e-12)
    assert v >= -1e-9
    p = rng.permutation(n)
    assert v == pytest.approx(empirical_hsic(x[p], y[p]).value, abs=1e-12)


def test_gradient_trivial_cases(rng):
    x = np.tile([[1.0, 2.0]], (5, 1))
    y = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(hsic_gradient_wrt_first(x, y), np.zeros((5, 2)))
    x = rng.normal(size=(5, 2))
    np.testing.assert_array_equal(hsic_gradient_wrt_first(x, np.ones((5, 3))), np.zeros((5, 2)))


def test_gradient_one_hot_labels():
    rng = make_rng(8)
    x = rng.normal(size=(8, 3)) * 4
    y = one_hot(rng.integers(0, 2, 8), 2)
    analytic = hsic_gradient_wrt_first(x, y, G5, G5)
    numeric = central_difference(lambda: empirical_hsic(x, y, G5, G5).value, x, eps=1e-5)
    assert rel_err(analytic, numeric) < 1e-5


def test_gradient_matches_finite_differences_over_grid():
    rng = make_rng(99)
    worst = 0.0
    count = 0
    for n in (4, 8, 16):
        for d in (1, 2, 5):
            for _ in range(3):
                sigma = rng.uniform(0.5, 5.0)
                x = rng.normal(size=(n, d)) * sigma
                y = rng.normal(size=(n, 2))
                cx = KernelConfig(sigma)
                analytic = hsic_gradient_wrt_first(x, y, cx, G5)
                numeric = central_difference(lambda: empirical_hsic(x, y, cx, G5).value, x)
                worst = max(worst, rel_err(analytic, numeric))
                count += 1
    assert count >= 20
    assert worst < 1e-4


def test_linear_kernel_gradient(rng):
    lin = KernelConfig(kind="linear")
    x = rng.normal(size=(6, 3))
    y = rng.normal(size=(6, 2))
    numeric = central_difference(lambda: empirical_hsic(x, y, lin, G5).value, x)
    assert rel_err(hsic_gradient_wrt_first(x, y, lin, G5), numeric) < 1e-6


def test_permutation_null_constant_y():
    x = make_rng(0).normal(size=(20, 2))
    q = permutation_null_quantile(x, np.ones((20, 1)), permutations=100, q=0.5, rng=make_rng(1))
    assert q == 0.0


def test_permutation_null_deterministic_and_validated():
    rng = make_rng(3)
    x, y = rng.normal(size=(16, 2)), rng.normal(size=(16, 1))
    a = permutation_null_quantile(x, y, permutations=100, q=0.9, rng=make_rng(5))
    b = permutation_null_quantile(x, y, permutations=100, q=0.9, rng=make_rng(5))
    assert a == b
    with pytest.raises(ValueError):
        permutation_null_quantile(x, y, permutations=50, q=0.9, rng=make_rng(5))
    with pytest.raises(ValueError):
        permutation_null_quantile(x, y, permutations=100, q=1.0, rng=make_rng(5))


def test_dependent_pair_exceeds_null():
    rng = make_rng(21)
    x = rng.normal(size=(64, 1)) * 3
    y = np.sin(x) * 3 + x**2 / 3
    observed = empirical_hsic(x, y).value
    assert observed > permutation_null_quantile(x, y, permutations=200, q=0.95, rng=rng)


def test_one_hot():
    np.testing.assert_array_equal(one_hot([1, 0, 2], 3), [[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        one_hot([3], 3)
