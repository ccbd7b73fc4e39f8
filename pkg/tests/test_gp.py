import numpy as np
import pytest
from scipy.stats import multivariate_normal

from conftest import random_batch, rel_err
from tensor_gp.errors import ConditioningError, DimensionError, InitializationError, ParameterError
from tensor_gp.gp import (
    GPModel,
    OptimizerConfig,
    _cholesky_with_jitter,
    fit,
    log_marginal_likelihood,
    mll_gradient,
    model_from_dict,
    model_to_dict,
    predict,
)
from tensor_gp.kernels import FAMILIES, KernelHyperparams, KernelSpec, make_kernel
from tensor_gp.tensor import GridShape

SHAPE = GridShape(4, 3, 2, 1)


def spec_for(family):
    return KernelSpec(family, patch_shape=(2, 2, 1) if family == "WConv" else None)


def toy(rng, n=15, shape=SHAPE):
    x = random_batch(shape, n, rng)
    y = np.sin(x.reshape(n, -1).sum(axis=1)) + 0.05 * rng.normal(size=n)
    return x, y


@pytest.mark.parametrize("family", FAMILIES)
def test_lml_matches_dense_oracle(family, rng):
    x, y = toy(rng)
    kern = make_kernel(spec_for(family), SHAPE)
    theta = kern.initial(x, y, rng)
    m = GPModel.create(spec_for(family), x, y, theta=theta, mu=0.3 if kern.uses_mean else 0.0, shape=SHAPE)
    cov = kern.gram(theta, x) + m.noise * np.eye(len(y))
    want = multivariate_normal(mean=np.full(len(y), m.mu), cov=cov).logpdf(y)
    assert log_marginal_likelihood(m) == pytest.approx(want, rel=1e-9)


@pytest.mark.parametrize("family", FAMILIES)
def test_mll_gradient_finite_differences(family, rng):
    x, y = toy(rng, n=10)
    spec = spec_for(family)
    kern = make_kernel(spec, SHAPE)
    theta = kern.initial(x, y, rng)
    # off the profiled optimum so the mean component is not zero
    mu = 0.4 if kern.uses_mean else 0.0
    m = GPModel.create(spec, x, y, theta=theta, mu=mu, shape=SHAPE)
    g = mll_gradient(m)
    h = 1e-5
    fd = []
    if kern.uses_mean:
        f = lambda mu: log_marginal_likelihood(GPModel.create(spec, x, y, theta=theta, mu=mu, shape=SHAPE))
        fd.append((f(m.mu + h) - f(m.mu - h)) / (2 * h))
    for t in range(len(theta)):
        e = np.zeros_like(theta)
        e[t] = h
        f = lambda v: log_marginal_likelihood(GPModel.create(spec, x, y, theta=v, mu=m.mu, shape=SHAPE))
        fd.append((f(theta + e) - f(theta - e)) / (2 * h))
    assert rel_err(g, fd).max() < 1e-4


def test_profiled_mean_is_stationary(rng):
    x, y = toy(rng)
    m = GPModel.create("RBF", x, y + 5.0, theta=np.array([0.0, 1.0]), shape=SHAPE)
    assert abs(mll_gradient(m)[0]) < 1e-8
    assert m.mu > 3.0


def test_predict_matches_dense_formulas(rng):
    x, y = toy(rng)
    xs = random_batch(SHAPE, 5, rng)
    kern = make_kernel("IMED", SHAPE)
    theta = kern.initial(x, y, rng)
    m = GPModel.create("IMED", x, y, theta=theta, shape=SHAPE)
    k = kern.gram(theta, x) + m.noise * np.eye(len(y))
    ks = kern.gram(theta, x, xs)
    kss = kern.gram(theta, xs)
    mean, var = predict(m, xs)
    assert np.allclose(mean, m.mu + ks.T @ np.linalg.solve(k, y - m.mu), rtol=1e-9)
    want = np.diag(kss - ks.T @ np.linalg.solve(k, ks)) + m.noise
    assert np.allclose(var, want, rtol=1e-8)
    _, latent = predict(m, xs, include_noise=False)
    assert np.allclose(var - latent, m.noise)


def test_interpolation_and_far_field(rng):
    shape = GridShape(3, 2, 1)
    x = random_batch(shape, 20, rng)
    y = rng.normal(size=20)
    hp = KernelHyperparams(1.0, 0.05)
    m = GPModel.create("RBF", x, y, theta=hp, shape=shape)
    mean, var = predict(m, x)
    assert np.abs(mean - y).max() / y.std() < 3 * np.sqrt(1e-4)
    assert var.max() <= 2e-4
    far = x[:3] + 1e3
    mean, var = predict(m, far)
    assert np.allclose(mean, m.mu, rtol=1e-6)
    assert np.allclose(var, 1.0 + 1e-4, rtol=1e-6)


def test_fit_improves_and_is_deterministic(rng):
    x, y = toy(rng, n=25)
    opt = OptimizerConfig(restarts=2, seed=3)
    a = fit(x, y, "ARD-RBF", opt, shape=SHAPE)
    b = fit(x, y, "ARD-RBF", opt, shape=SHAPE)
    assert np.array_equal(a.theta, b.theta)
    assert log_marginal_likelihood(a) >= max(a.init_lmls) - 1e-9
    assert a.history[-1] == pytest.approx(log_marginal_likelihood(a), rel=1e-8, abs=1e-8)


def test_fit_with_design_tensors(rng):
    from tensor_gp.tensor import DesignTensor

    x, y = toy(rng, n=12)
    xs = [DesignTensor(SHAPE, v.ravel()) for v in x]
    m = fit(xs, y, "RBF", OptimizerConfig(restarts=1))
    mean, _ = predict(m, xs[:2])
    assert mean.shape == (2,)


def test_fit_input_errors(rng):
    x, y = toy(rng, n=5)
    with pytest.raises(DimensionError):
        fit(x, y[:4], "RBF", shape=SHAPE)
    with pytest.raises(DimensionError):
        fit(x[:1], y[:1], "RBF", shape=SHAPE)
    with pytest.raises(DimensionError):
        fit(x, y, "RBF")
    with pytest.raises(ParameterError):
        OptimizerConfig(restarts=0)


def test_non_finite_data_rejected(rng):
    x, y = toy(rng, n=6)
    with pytest.raises(ParameterError):
        fit(x, np.full(6, np.nan), "RBF", shape=SHAPE)
    x[0, 0, 0] = np.inf
    with pytest.raises(ParameterError):
        fit(x, y, "RBF", shape=SHAPE)


def test_initialization_error_when_no_start_is_finite(rng, monkeypatch):
    from tensor_gp.kernels import RBFKernel

    x, y = toy(rng, n=6)
    monkeypatch.setattr(RBFKernel, "gram", lambda self, theta, x, x2=None: np.full((len(x), len(x)), np.nan))
    with pytest.raises(InitializationError) as info:
        fit(x, y, "RBF", OptimizerConfig(restarts=2), shape=SHAPE)
    assert info.value.theta is not None


def test_jitter_escalation_and_failure():
    k = np.ones((4, 4))
    chol, eps = _cholesky_with_jitter(k, 0.0)
    assert eps > 0 and np.allclose(chol @ chol.T, k + eps * np.eye(4))
    with pytest.raises(ConditioningError):
        _cholesky_with_jitter(-np.eye(3), 1e-4)


def test_model_roundtrip(rng):
    x, y = toy(rng)
    m = fit(x, y, "IMED", OptimizerConfig(restarts=1), shape=SHAPE)
    doc = model_to_dict(m)
    m2 = model_from_dict(doc, x, y)
    assert np.array_equal(predict(m, x[:3])[0], predict(m2, x[:3])[0])
    with pytest.raises(ParameterError):
        model_from_dict(doc, x, y + 1.0)


def test_mlin_has_no_mean(rng):
    x, y = toy(rng)
    m = GPModel.create("M-Lin", x, y, shape=SHAPE)
    assert m.mu == 0.0
    assert len(mll_gradient(m)) == m.kernel.n_params == m.n_hyperparameters
