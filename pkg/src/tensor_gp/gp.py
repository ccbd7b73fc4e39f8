"""Exact Gaussian-process regression with a constant mean.

The model is ``y = f(X) + e`` with ``f ~ GP(mu, k)`` and a small fixed
noise variance (``1e-4`` by default) that keeps the Gram matrix of a
deterministic simulator well conditioned. Hyperparameters are learned by
maximizing the log marginal likelihood with L-BFGS-B in log space; the
constant mean is profiled out in closed form at every step.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .errors import ConditioningError, DimensionError, InitializationError, ParameterError
from .kernels import Kernel, KernelHyperparams, KernelSpec, make_kernel
from .tensor import GridShape, stack

__all__ = [
    "DEFAULT_NOISE",
    "MAX_JITTER",
    "OptimizerConfig",
    "GPModel",
    "count_hyperparameters",
    "log_marginal_likelihood",
    "mll_gradient",
    "fit",
    "predict",
    "model_to_dict",
    "model_from_dict",
]

log = logging.getLogger(__name__)

DEFAULT_NOISE = 1e-4
MAX_JITTER = 1e-1
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class OptimizerConfig:
    """Settings for hyperparameter learning.

    ``init_ranges`` maps a hyperparameter group name (``log_signal_variance``,
    ``log_lengthscale``, ``log_gamma``) to a ``(lo, hi)`` interval in log
    space, overriding the data-driven defaults.
    """

    max_iters: int = 200
    grad_tolerance: float = 1e-5
    restarts: int = 3
    init_ranges: Optional[dict] = None
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not self.grad_tolerance > 0:
            raise ParameterError("grad_tolerance must be > 0")
        if self.restarts < 1:
            raise ParameterError("restarts must be >= 1")
        if self.init_ranges:
            self.init_ranges = {k: tuple(float(v) for v in iv) for k, iv in self.init_ranges.items()}


def _cholesky_with_jitter(k: np.ndarray, noise: float):
    if not np.all(np.isfinite(k)):
        raise ConditioningError("Gram matrix has non-finite entries")
    eps = noise
    while True:
        try:
            chol = np.linalg.cholesky(k + eps * np.eye(len(k)))
            return chol, eps
        except np.linalg.LinAlgError:
            if eps * 10 > MAX_JITTER * (1 + 1e-12):
                raise ConditioningError(
                    f"Gram matrix not positive definite even with jitter {eps:g}"
                ) from None
            eps = eps * 10 if eps > 0 else 1e-10
            log.debug("cholesky failed, raising jitter to %g", eps)


def _fingerprint(x: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype=float).tobytes())
    h.update(np.ascontiguousarray(y, dtype=float).tobytes())
    return h.hexdigest()


@dataclass
class GPModel:
    """A factorized GP on a fixed training set.

    Build with :meth:`create` (fixed hyperparameters) or :func:`fit`.
    ``chol`` is the lower Cholesky factor of ``K + noise*I`` and ``alpha``
    solves ``(K + noise*I) alpha = y - mu``.
    """

    spec: KernelSpec
    kernel: Kernel
    theta: np.ndarray
    mu: float
    noise: float
    train_x: np.ndarray
    train_y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    history: list = field(default_factory=list)
    init_lmls: list = field(default_factory=list)
    negative_variance_count: int = 0

    @classmethod
    def create(cls, spec, xs, ys, theta=None, mu=None, noise: float = DEFAULT_NOISE,
               shape: Optional[GridShape] = None) -> "GPModel":
        """Factorize a model at given hyperparameters.

        ``theta`` may be packed or a :class:`KernelHyperparams`; it defaults
        to the kernel's default hyperparameters. ``mu=None`` uses the
        profile-likelihood optimum (or 0 for kernels without a mean).
        """
        spec = spec if isinstance(spec, KernelSpec) else KernelSpec(spec)
        x, shape = _as_batch(xs, shape)
        y = np.asarray(ys, dtype=float).ravel()
        if len(y) != len(x):
            raise DimensionError(f"{len(x)} inputs but {len(y)} outputs")
        kernel = make_kernel(spec, shape)
        vec = kernel.pack(kernel.default_hyperparams()) if theta is None else kernel._vec(theta)
        chol, eps = _cholesky_with_jitter(kernel.gram(vec, x), noise)
        if mu is None:
            mu = _profile_mean(chol, y) if kernel.uses_mean else 0.0
        alpha = sla.cho_solve((chol, True), y - mu)
        return cls(spec, kernel, vec, float(mu), eps, x, y, chol, alpha)

    @property
    def shape(self) -> GridShape:
        return self.kernel.shape

    @property
    def hyperparams(self) -> KernelHyperparams:
        return self.kernel.unpack(self.theta)

    @property
    def n_hyperparameters(self) -> int:
        return self.kernel.n_params + int(self.kernel.uses_mean)

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.train_x, self.train_y)


def _as_batch(xs, shape):
    if isinstance(xs, np.ndarray):
        if shape is None:
            raise DimensionError("a GridShape is required for array inputs")
        return stack(xs, shape), shape
    xs = list(xs)
    shape = shape or xs[0].shape
    return stack(xs, shape), shape


def _profile_mean(chol, y) -> float:
    ones = np.ones_like(y)
    kinv1 = sla.cho_solve((chol, True), ones)
    return float(kinv1 @ y / (kinv1 @ ones))


def count_hyperparameters(spec: KernelSpec | str, shape: GridShape) -> int:
    """Learned hyperparameters per model, the constant mean included."""
    k = make_kernel(spec, shape)
    return k.n_params + int(k.uses_mean)


def log_marginal_likelihood(model: GPModel) -> float:
    """``log p(y | X)`` at the model's hyperparameters, mean and noise."""
    r = model.train_y - model.mu
    n = len(r)
    val = -0.5 * r @ model.alpha - np.sum(np.log(np.diag(model.chol))) - 0.5 * n * _LOG_2PI
    return float(val)


def _theta_gradient(kernel, vec, x, chol, alpha) -> np.ndarray:
    kinv = sla.cho_solve((chol, True), np.eye(len(alpha)))
    w = np.outer(alpha, alpha) - kinv
    return 0.5 * kernel.grad_dot(vec, x, w)


def mll_gradient(model: GPModel) -> np.ndarray:
    """Gradient of :func:`log_marginal_likelihood`.

    Ordered as ``[d/d mu, d/d theta_packed...]``; the mean entry is omitted
    for kernels without a mean (M-Lin).
    """
    g = _theta_gradient(model.kernel, model.theta, model.train_x, model.chol, model.alpha)
    if model.kernel.uses_mean:
        return np.concatenate([[model.alpha.sum()], g])
    return g


class _Objective:
    """Negative profile log likelihood and gradient over packed params."""

    def __init__(self, kernel, x, y, noise):
        self.kernel, self.x, self.y, self.noise = kernel, x, y, noise
        self.evals = 0

    def lml(self, vec):
        chol, _ = _cholesky_with_jitter(self.kernel.gram(vec, self.x), self.noise)
        mu = _profile_mean(chol, self.y) if self.kernel.uses_mean else 0.0
        alpha = sla.cho_solve((chol, True), self.y - mu)
        val = -0.5 * (self.y - mu) @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * len(self.y) * _LOG_2PI
        return val, chol, alpha

    def __call__(self, vec):
        self.evals += 1
        try:
            with np.errstate(over="raise", invalid="raise"):
                val, chol, alpha = self.lml(vec)
                grad = _theta_gradient(self.kernel, vec, self.x, chol, alpha)
        except (ConditioningError, np.linalg.LinAlgError, FloatingPointError):
            return 1e20, np.zeros_like(vec)
        if not (np.isfinite(val) and np.all(np.isfinite(grad))):
            return 1e20, np.zeros_like(vec)
        return -val, -grad


def fit(xs, ys, spec: KernelSpec | str, opt: Optional[OptimizerConfig] = None,
        noise: float = DEFAULT_NOISE, shape: Optional[GridShape] = None) -> GPModel:
    """Learn hyperparameters by maximizing the marginal likelihood.

    Runs ``opt.restarts`` L-BFGS-B ascents and returns the best model. The
    first ascent starts at the centre of the initialization box (unit-scale
    lengthscales relative to the median pairwise distance); the rest start
    at random points in it. The returned likelihood is never below that of
    any starting point.

    Raises
    ------
    InitializationError
        If no starting point has a finite likelihood.
    """
    opt = opt or OptimizerConfig()
    spec = spec if isinstance(spec, KernelSpec) else KernelSpec(spec)
    x, shape = _as_batch(xs, shape)
    y = np.asarray(ys, dtype=float).ravel()
    if len(x) < 2:
        raise DimensionError("need at least two training points")
    if len(y) != len(x):
        raise DimensionError(f"{len(x)} inputs but {len(y)} outputs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ParameterError("training inputs and outputs must be finite")
    kernel = make_kernel(spec, shape)
    rng = np.random.default_rng(opt.seed)
    bounds = kernel.bounds(x, y)
    lo = np.array([b[0] if b[0] is not None else -np.inf for b in bounds])
    hi = np.array([b[1] if b[1] is not None else np.inf for b in bounds])
    obj = _Objective(kernel, x, y, noise)

    best_vec, best_val, best_hist = None, np.inf, []
    init_lmls, last_bad = [], None
    for r in range(opt.restarts):
        x0 = np.clip(kernel.initial(x, y, rng if r else None, opt.init_ranges), lo, hi)
        f0, _ = obj(x0)
        if f0 >= 1e20:
            last_bad = x0
            continue
        init_lmls.append(-f0)
        hist = [-f0]
        res = minimize(
            obj, x0, jac=True, method="L-BFGS-B", bounds=bounds,
            callback=lambda intermediate_result: hist.append(-intermediate_result.fun),
            options={"maxiter": opt.max_iters, "gtol": opt.grad_tolerance},
        )
        cand, val = (res.x, res.fun) if res.fun <= f0 else (x0, f0)
        if val < best_val:
            best_vec, best_val, best_hist = cand, val, hist
    if best_vec is None:
        raise InitializationError(
            f"{spec.family}: likelihood not finite at any of {opt.restarts} starting points",
            theta=last_bad,
        )
    model = GPModel.create(spec, x, y, theta=best_vec, noise=noise, shape=shape)
    model.history = best_hist
    model.init_lmls = init_lmls
    return model


def predict(model: GPModel, xs_star, include_noise: bool = True):
    """Posterior predictive mean and variance at new designs.

    Variances include the observation noise unless ``include_noise`` is
    false. Numerically negative latent variances are clamped at zero;
    those below ``-1e-10`` are tallied in ``model.negative_variance_count``.
    """
    xs, _ = _as_batch(xs_star, model.shape)
    if xs.shape[1:] != model.train_x.shape[1:]:
        raise DimensionError(f"prediction inputs {xs.shape[1:]} do not match training {model.train_x.shape[1:]}")
    ks = model.kernel.gram(model.theta, model.train_x, xs)
    mean = model.mu + ks.T @ model.alpha
    v = sla.solve_triangular(model.chol, ks, lower=True)
    var = model.kernel.diag(model.theta, xs) - np.einsum("ij,ij->j", v, v)
    bad = var < -1e-10
    if np.any(bad):
        model.negative_variance_count += int(bad.sum())
        log.warning("%d predictive variances below -1e-10 clamped to 0", int(bad.sum()))
    var = np.maximum(var, 0.0)
    if include_noise:
        var = var + model.noise
    return mean, var


def model_to_dict(model: GPModel) -> dict:
    """JSON-ready description sufficient to rebuild the model from its data."""
    return {
        "kernel": model.spec.to_dict(),
        "shape": model.shape.to_dict(),
        "hyperparams": model.hyperparams.to_dict(),
        "theta": model.theta.tolist(),
        "mu": model.mu,
        "noise": model.noise,
        "n_train": int(len(model.train_y)),
        "fingerprint": model.fingerprint,
    }


def model_from_dict(doc: dict, xs, ys) -> GPModel:
    """Rebuild a model saved by :func:`model_to_dict` on its training data."""
    spec = KernelSpec.from_dict(doc["kernel"])
    shape = GridShape(**doc["shape"])
    model = GPModel.create(spec, xs, ys, theta=np.asarray(doc["theta"]), mu=doc["mu"],
                           noise=doc["noise"], shape=shape)
    if model.fingerprint != doc["fingerprint"]:
        raise ParameterError("training data does not match the saved model fingerprint")
    return model
