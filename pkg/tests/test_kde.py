import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfax.errors import EmptySupport, InvalidParameter, MapMismatch
from dfax.kde import (
    ExactKde1D,
    GaussianKernelParams,
    approx_density,
    build_feature_map,
    exact_density,
    gaussian_kernel,
    mean_map,
)

G1 = GaussianKernelParams(1.0)
reals = st.floats(-50, 50, allow_nan=False)


def naive_density(support, q, gamma):
    total = 0.0
    for p in support:
        total += math.exp(-gamma * (q - p) ** 2)
    return total / len(support)


def test_kernel_values():
    assert gaussian_kernel(0.0, 0.0, G1) == 1.0
    assert gaussian_kernel(0.0, 1.0, GaussianKernelParams(0.5)) == pytest.approx(0.606531, abs=1e-6)


@given(reals, reals, st.floats(1e-4, 1e4))
def test_kernel_symmetric_and_bounded(a, b, g):
    p = GaussianKernelParams(g)
    k = gaussian_kernel(a, b, p)
    assert k == gaussian_kernel(b, a, p)
    assert 0.0 <= k <= 1.0


def test_gamma_bandwidth_relation():
    p = GaussianKernelParams.from_bandwidth(2.0)
    assert p.gamma == pytest.approx(1 / 8)
    assert p.bandwidth == pytest.approx(2.0)
    with pytest.raises(InvalidParameter):
        GaussianKernelParams(0.0)


def test_exact_density_examples():
    assert exact_density(ExactKde1D([0.0], GaussianKernelParams(7.0)), 0.0) == 1.0
    two = ExactKde1D([0.0, 2.0], GaussianKernelParams(0.5))
    assert exact_density(two, 1.0) == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_exact_density_matches_naive_loop():
    rng = np.random.default_rng(11)
    s = rng.standard_normal(50)
    kde = ExactKde1D(s, GaussianKernelParams(0.7))
    for q in rng.standard_normal(10) * 2:
        assert kde.density(q) == pytest.approx(naive_density(s, q, 0.7), abs=1e-12)


def test_empty_support():
    with pytest.raises(EmptySupport):
        ExactKde1D([], G1)
    fm = build_feature_map(G1, 16, 0)
    with pytest.raises(EmptySupport):
        mean_map(fm, [])


def test_batching_is_bit_identical():
    rng = np.random.default_rng(2)
    kde = ExactKde1D(rng.standard_normal(3000), G1)
    q = rng.standard_normal(700)
    batch = kde.density(q)
    assert all(kde.density(v) == batch[i] for i, v in enumerate(q[:50]))


@settings(max_examples=30, deadline=None)
@given(st.lists(reals, min_size=1, max_size=30), reals, st.floats(1e-3, 10))
def test_exact_density_in_unit_interval(support, q, g):
    v = ExactKde1D(support, GaussianKernelParams(g)).density(q)
    assert 0.0 <= v <= 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30), st.floats(-5, 5), st.floats(-100, 100))
def test_translation_invariance(support, q, shift):
    s = np.array(support)
    a = ExactKde1D(s, G1).density(q)
    b = ExactKde1D(s + shift, G1).density(q + shift)
    assert a == pytest.approx(b, abs=1e-12)


def test_derivative_bounded_by_kernel_slope():
    rng = np.random.default_rng(5)
    gamma = 2.0
    kde = ExactKde1D(rng.standard_normal(40), GaussianKernelParams(gamma))
    s = kde.support_points
    bound = math.sqrt(2 * gamma / math.e)
    for q in rng.uniform(-3, 3, 10):
        analytic = np.mean(-2 * gamma * (q - s) * np.exp(-gamma * (q - s) ** 2))
        h = 1e-6
        fd = (kde.density(q + h) - kde.density(q - h)) / (2 * h)
        assert fd == pytest.approx(analytic, rel=1e-4, abs=1e-9)
        assert abs(fd) <= bound + 1e-9


def test_feature_map_validation_and_determinism():
    with pytest.raises(InvalidParameter):
        build_feature_map(G1, 0, 0)
    with pytest.raises(InvalidParameter):
        build_feature_map(G1, 7, 0)
    a, b = build_feature_map(G1, 512, 42), build_feature_map(G1, 512, 42)
    assert a.frequencies.tobytes() == b.frequencies.tobytes()
    assert a.frequencies.tobytes() != build_feature_map(G1, 512, 43).frequencies.tobytes()


def test_self_inner_product_is_one():
    fm = build_feature_map(G1, 2048, 0)
    for x in (-3.0, 0.0, 0.4, 10.0):
        phi = fm.transform(x)
        assert phi.shape == (2048,)
        assert np.dot(phi, phi) == pytest.approx(1.0, abs=0.05)


def test_inner_products_approximate_kernel():
    fm = build_feature_map(G1, 2048, 0)
    rng = np.random.default_rng(9)
    x, y = rng.uniform(-4, 4, 1000), rng.uniform(-4, 4, 1000)
    approx = (fm.transform(x) * fm.transform(y)).sum(axis=1)
    assert np.max(np.abs(approx - gaussian_kernel(x, y, G1))) <= 0.05


def test_mean_map_small_cases():
    fm = build_feature_map(G1, 64, 1)
    np.testing.assert_array_equal(mean_map(fm, [0.3]).mean_vector, fm.transform(0.3))
    mm = mean_map(fm, [0.3, -1.2])
    np.testing.assert_allclose(mm.mean_vector, (fm.transform(0.3) + fm.transform(-1.2)) / 2, atol=1e-15)
    assert mm.count == 2


def test_approx_density_is_inner_product():
    rng = np.random.default_rng(4)
    fm = build_feature_map(G1, 256, 3)
    mm = mean_map(fm, rng.standard_normal(500))
    for q in rng.standard_normal(20):
        # queries take their cosines in single precision
        assert approx_density(mm, fm, q) == pytest.approx(np.dot(fm.transform(q), mm.mean_vector), abs=1e-6)


def test_single_point_self_density():
    fm = build_feature_map(G1, 2048, 0)
    assert approx_density(mean_map(fm, [1.7]), fm, 1.7) == pytest.approx(1.0, abs=0.05)


def test_approx_matches_exact_on_large_support():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(10_000)
    q = rng.standard_normal(20)
    fm = build_feature_map(G1, 2048, 0)
    err = np.abs(approx_density(mean_map(fm, s), fm, q) - ExactKde1D(s, G1).density(q))
    assert err.max() <= 0.01


def test_error_shrinks_with_dimension():
    rng = np.random.default_rng(1)
    s, q = rng.standard_normal(2000), rng.standard_normal(20)
    exact = ExactKde1D(s, G1).density(q)

    def med_err(dim):
        fm = build_feature_map(G1, dim, 7)
        return np.median(np.abs(approx_density(mean_map(fm, s), fm, q) - exact))

    assert med_err(4096) <= med_err(256)


def test_map_mismatch():
    fm_a, fm_b = build_feature_map(G1, 64, 0), build_feature_map(G1, 128, 0)
    with pytest.raises(MapMismatch):
        approx_density(mean_map(fm_a, [0.0]), fm_b, 0.0)
    with pytest.raises(MapMismatch):
        approx_density(mean_map(fm_a, [0.0]), build_feature_map(G1, 64, 1), 0.0)
