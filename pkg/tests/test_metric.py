import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_designs
from tensor_gp.errors import ConditioningError, DimensionError, ParameterError
from tensor_gp.metric import (
    MetricParams,
    build_metric,
    factorize,
    gamma_derivatives,
    imed_distance,
    squared_voxel_distance,
    transform,
    write_metric_csv,
)
from tensor_gp.tensor import DesignTensor, GridShape


def brute_metric(shape, gamma):
    n = shape.n_voxels
    g = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            g[a, b] = np.exp(-squared_voxel_distance(a, b, shape) / (2 * gamma**2)) / (2 * np.pi * gamma**2)
    return g


@pytest.mark.parametrize("dims", [(4, 3, 2), (6, 3, 1), (3, 3, 3)])
@pytest.mark.parametrize("gamma", [0.3, 1.0, 2.5])
def test_entries_match_pairwise_formula(dims, gamma):
    shape = GridShape(*dims)
    assert np.allclose(build_metric(shape, gamma).g, brute_metric(shape, gamma), rtol=1e-13, atol=0)


def test_hand_entries():
    # 2 voxels one step apart, gamma = 1: diagonal 1/(2 pi), off-diagonal e^{-1/2}/(2 pi)
    g = build_metric(GridShape(2, 1, 1), 1.0).g
    assert g[0, 0] == pytest.approx(1 / (2 * np.pi), rel=1e-15)
    assert g[0, 1] == pytest.approx(np.exp(-0.5) / (2 * np.pi), rel=1e-15)


def test_squared_voxel_distance():
    s = GridShape(6, 6, 3)
    a = 0
    b = 1 * 18 + 2 * 3 + 2  # (1, 2, 2)
    assert squared_voxel_distance(a, b, s) == 1 + 4 + 4


@pytest.mark.parametrize("dims", [(4, 3, 2), (6, 6, 3)])
@pytest.mark.parametrize("gamma", [0.1, 1.0, 5.0])
def test_factor_reproduces_metric(dims, gamma):
    g = build_metric(GridShape(*dims), gamma)
    a = factorize(g).a
    assert np.abs(a.T @ a - g.g).max() < 1e-10 * np.abs(g.g).max()
    assert np.allclose(a, a.T)


def test_kronecker_eigenvalues_match_dense():
    g = build_metric(GridShape(4, 3, 2), 0.8)
    assert np.allclose(g.eigenvalues(), np.linalg.eigvalsh(g.g), rtol=1e-9, atol=1e-14)


def test_too_large_gamma_is_rejected():
    with pytest.raises(ConditioningError):
        build_metric(GridShape(6, 6, 3), 40.0)


def test_metric_params_validation():
    assert MetricParams((1.0, 2.0, 0.5)).per_axis
    assert MetricParams(2.0).axes == (2.0, 2.0, 2.0)
    for bad in (0.0, -1.0, (1.0, 2.0), float("nan")):
        with pytest.raises(ParameterError):
            MetricParams(bad)


def test_per_axis_metric_entries():
    shape = GridShape(3, 3, 2)
    gi, gj, gk = 0.5, 1.5, 2.0
    g = build_metric(shape, MetricParams((gi, gj, gk))).g
    c = 1 / (2 * np.pi * (gi * gj * gk) ** (2 / 3))
    from tensor_gp.tensor import voxel_coords

    for a in range(shape.n_voxels):
        for b in range(shape.n_voxels):
            (i, j, k), (i2, j2, k2) = voxel_coords(a, shape), voxel_coords(b, shape)
            e = (i - i2) ** 2 / gi**2 + (j - j2) ** 2 / gj**2 + (k - k2) ** 2 / gk**2
            assert g[a, b] == pytest.approx(c * np.exp(-0.5 * e), rel=1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(0.2, 3.0))
@settings(max_examples=25, deadline=None)
def test_imed_equals_transformed_euclidean(seed, gamma):
    rng = np.random.default_rng(seed)
    shape = GridShape(3, 3, 2, 2)
    x, x2 = random_designs(shape, 2, rng)
    g = build_metric(shape, gamma)
    d = imed_distance(x, x2, g)
    z = transform([x, x2], factorize(g))
    assert abs(d - np.sum((z[0] - z[1]) ** 2)) <= 1e-10 * (1 + d)
    # brute-force double sum
    diff = (x.values - x2.values).reshape(2, -1)
    gg = g.g
    brute = sum(diff[q, a] * diff[q, b] * gg[a, b] for q in range(2) for a in range(18) for b in range(18))
    assert d == pytest.approx(brute, rel=1e-10)


def test_imed_nonnegative_and_zero_on_identical(rng):
    shape = GridShape(4, 3, 1)
    x, x2 = random_designs(shape, 2, rng)
    g = build_metric(shape, 1.0)
    assert imed_distance(x, x, g) == 0.0
    assert imed_distance(x, x2, g) > 0


def test_small_gamma_reduces_to_scaled_euclidean(rng):
    shape = GridShape(4, 3, 2)
    x, x2 = random_designs(shape, 2, rng)
    gamma = 0.01
    d = imed_distance(x, x2, build_metric(shape, gamma))
    de = np.sum((x.values - x2.values) ** 2)
    assert d == pytest.approx(de / (2 * np.pi * gamma**2), rel=1e-12)


def test_transform_single_and_batch(rng):
    shape = GridShape(3, 2, 1, 2)
    xs = random_designs(shape, 3, rng)
    t = factorize(build_metric(shape, 1.0))
    zb = transform(xs, t)
    assert zb.shape == (3, 12)
    assert np.allclose(transform(xs[1], t), zb[1])
    with pytest.raises(DimensionError):
        transform(xs, [t])


def _fd(fun, lg, h=1e-6):
    return (fun(lg + h) - fun(lg - h)) / (2 * h)


def test_gamma_derivatives_isotropic():
    shape = GridShape(4, 3, 2)
    gamma = 1.3
    (dg, da), = gamma_derivatives(build_metric(shape, gamma))
    fg = _fd(lambda lg: build_metric(shape, np.exp(lg)).g, np.log(gamma))
    fa = _fd(lambda lg: factorize(build_metric(shape, np.exp(lg))).a, np.log(gamma))
    assert np.abs(dg - fg).max() < 1e-7 * np.abs(fg).max()
    assert np.abs(da - fa).max() < 1e-7 * np.abs(fa).max()


def test_gamma_derivatives_per_axis():
    shape = GridShape(3, 3, 2)
    axes = np.array([0.7, 1.2, 1.6])
    ders = gamma_derivatives(build_metric(shape, MetricParams(tuple(axes))))
    assert len(ders) == 3
    for ax, (dg, da) in enumerate(ders):
        def at(lg, what):
            a = axes.copy()
            a[ax] = np.exp(lg)
            m = build_metric(shape, MetricParams(tuple(a)))
            return m.g if what == "g" else factorize(m).a
        fg = _fd(lambda lg: at(lg, "g"), np.log(axes[ax]))
        fa = _fd(lambda lg: at(lg, "a"), np.log(axes[ax]))
        assert np.abs(dg - fg).max() < 1e-7 * np.abs(fg).max()
        assert np.abs(da - fa).max() < 1e-7 * np.abs(fa).max()


def test_write_metric_csv(tmp_path):
    g = build_metric(GridShape(3, 2, 1), 0.9)
    path = tmp_path / "g.csv"
    write_metric_csv(g, path)
    assert np.array_equal(np.loadtxt(path, delimiter=","), g.g)


def test_imed_shape_mismatch():
    a = DesignTensor(GridShape(2, 2, 1), np.zeros(4))
    b = DesignTensor(GridShape(4, 1, 1), np.zeros(4))
    with pytest.raises(DimensionError):
        imed_distance(a, b, build_metric(GridShape(2, 2, 1), 1.0))
