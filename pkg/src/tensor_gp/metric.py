"""Voxel-proximity metric matrices and their square-root transforms.

Entry ``(a, b)`` of the metric for one material property is a normalized
Gaussian of the distance between voxels ``a`` and ``b``::

    g_ab = exp(-|J_a - J_b|^2 / (2 gamma^2)) / (2 pi gamma^2)

Because the exponent is a sum over the three grid axes, the matrix is a
scaled Kronecker product of three small 1-d Gaussian matrices. All
eigen-computations happen on those 1-d factors, which keeps the eigenvalues
positive and accurate even when the full matrix has a condition number far
beyond double precision.

The transform ``A`` is the symmetric square root of ``G`` (``A = A^T``,
``A^T A = G``). It is unique and smooth in ``gamma``, so transformed features
``Z = A vec(X)`` have a well defined derivative with respect to ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Sequence, Union

import numpy as np

from .errors import ConditioningError, DimensionError, ParameterError
from .tensor import DesignTensor, GridShape, stack, voxel_coords

__all__ = [
    "EIG_FLOOR",
    "MetricParams",
    "MetricMatrix",
    "MetricTransform",
    "squared_voxel_distance",
    "build_metric",
    "factorize",
    "transform",
    "imed_distance",
    "gamma_derivatives",
    "write_metric_csv",
]

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricParams:
    """Lengthscale of the voxel-proximity Gaussian for one property.

    ``gamma`` is a scalar (isotropic) or a triple of per-axis lengthscales
    ``(gamma_i, gamma_j, gamma_k)``, in voxel units.
    """

    gamma: Union[float, tuple[float, float, float]] = 1.0

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.size not in (1, 3) or g.ndim != 1:
            raise ParameterError(f"gamma must be a scalar or a triple, got {self.gamma!r}")
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ParameterError(f"gamma must be positive and finite, got {self.gamma!r}")
        object.__setattr__(self, "gamma", float(g[0]) if g.size == 1 else tuple(float(v) for v in g))

    @property
    def per_axis(self) -> bool:
        return isinstance(self.gamma, tuple)

    @property
    def axes(self) -> tuple[float, float, float]:
        return self.gamma if self.per_axis else (self.gamma,) * 3

    @property
    def prefactor(self) -> float:
        # per-axis: geometric mean of the axis lengthscales stands in for gamma
        gbar2 = np.prod(self.axes) ** (2.0 / 3.0)
        return 1.0 / (2.0 * np.pi * gbar2)


@dataclass(frozen=True)
class _AxisFactor:
    gauss: np.ndarray   # 1-d Gaussian proximity matrix (unnormalized)
    evals: np.ndarray
    evecs: np.ndarray
    sqrt: np.ndarray    # symmetric square root of gauss
    sqdist: np.ndarray  # squared offsets between positions


@lru_cache(maxsize=512)
def _axis_factor(n: int, gamma: float) -> _AxisFactor:
    pos = np.arange(n, dtype=float)
    sqdist = (pos[:, None] - pos[None, :]) ** 2
    gauss = np.exp(-sqdist / (2.0 * gamma * gamma))
    evals, evecs = np.linalg.eigh(gauss)
    if evals[0] < EIG_FLOOR * evals[-1]:
        raise ConditioningError(
            f"metric lengthscale gamma={gamma:g} is too large for a grid axis of {n} voxels "
            f"(relative eigenvalue {evals[0] / evals[-1]:.3g} < {EIG_FLOOR:g})"
        )
    sqrt = (evecs * np.sqrt(evals)) @ evecs.T
    sqrt = 0.5 * (sqrt + sqrt.T)
    for arr in (gauss, evals, evecs, sqrt, sqdist):
        arr.setflags(write=False)
    return _AxisFactor(gauss, evals, evecs, sqrt, sqdist)


def _kron(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats)


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """Positive-definite proximity matrix ``G`` for one material property."""

    shape: GridShape
    params: MetricParams
    _factors: tuple = field(repr=False)

    @property
    def scale(self) -> float:
        return self.params.prefactor

    @property
    def g(self) -> np.ndarray:
        """Dense ``(v*h*w, v*h*w)`` matrix."""
        return self.scale * _kron([f.gauss for f in self._factors])

    def eigenvalues(self) -> np.ndarray:
        """All eigenvalues, ascending, from the Kronecker factors."""
        ev = self.scale * _kron([f.evals for f in self._factors])
        return np.sort(ev)

    @property
    def n(self) -> int:
        return self.shape.n_voxels


@dataclass(frozen=True, eq=False)
class MetricTransform:
    """Square-root factor ``a`` of a metric matrix: ``a.T @ a == g``."""

    metric: MetricMatrix
    a: np.ndarray = field(repr=False)

    def apply(self, vecs: np.ndarray) -> np.ndarray:
        """Transform flattened single-property voxel vectors (last axis)."""
        return vecs @ self.a.T


def squared_voxel_distance(alpha: int, beta: int, shape: GridShape) -> int:
    """Squared Euclidean distance between two voxels given by flat index."""
    i, j, k = voxel_coords(alpha, shape)
    i2, j2, k2 = voxel_coords(beta, shape)
    return (i - i2) ** 2 + (j - j2) ** 2 + (k - k2) ** 2


def build_metric(shape: GridShape, params: MetricParams | float) -> MetricMatrix:
    """Build the proximity matrix for ``shape`` at lengthscale ``params``.

    Raises :class:`ConditioningError` when ``gamma`` is so large relative to
    an axis length that the axis factor is numerically singular.
    """
    if not isinstance(params, MetricParams):
        params = MetricParams(params)
    factors = tuple(_axis_factor(n, g) for n, g in zip(shape.spatial, params.axes))
    return MetricMatrix(shape, params, factors)


def factorize(g: MetricMatrix) -> MetricTransform:
    """Symmetric square root ``A`` with ``A^T A = G``."""
    a = np.sqrt(g.scale) * _kron([f.sqrt for f in g._factors])
    a.setflags(write=False)
    return MetricTransform(g, a)


def _per_property(obj, p: int) -> list:
    if isinstance(obj, (MetricMatrix, MetricTransform)):
        return [obj] * p
    obj = list(obj)
    if len(obj) != p:
        raise DimensionError(f"need one metric per property ({p}), got {len(obj)}")
    return obj


def transform(x, t: MetricTransform | Sequence[MetricTransform]) -> np.ndarray:
    """Transformed features ``Z``: per property ``A_p vec(X_p)``, concatenated.

    ``x`` may be a single :class:`DesignTensor` (returns a length ``v*h*w*p``
    vector) or a batch (returns ``(n, v*h*w*p)``).
    """
    single = isinstance(x, DesignTensor)
    batch = stack([x] if single else x)
    ts = _per_property(t, batch.shape[1])
    for tp in ts:
        if tp.a.shape[0] != batch.shape[2]:
            raise DimensionError(f"transform built for {tp.a.shape[0]} voxels, input has {batch.shape[2]}")
    z = np.concatenate([ts[q].apply(batch[:, q, :]) for q in range(batch.shape[1])], axis=1)
    return z[0] if single else z


def imed_distance(x: DesignTensor, x2: DesignTensor, g: MetricMatrix | Sequence[MetricMatrix]) -> float:
    """Generalized squared distance ``sum_p d_p^T G_p d_p`` with ``d = x - x2``."""
    if x.shape != x2.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x2.shape}")
    gs = _per_property(g, x.shape.p)
    n = x.shape.n_voxels
    d = (x.values - x2.values).reshape(x.shape.p, n)
    total = 0.0
    for q, gq in enumerate(gs):
        if gq.n != n:
            raise DimensionError(f"metric built for {gq.n} voxels, input has {n}")
        total += float(d[q] @ gq.g @ d[q])
    return max(total, 0.0)


def gamma_derivatives(g: MetricMatrix) -> list[tuple[np.ndarray, np.ndarray]]:
    """Derivatives ``(dG, dA)`` with respect to each log-lengthscale.

    One pair for an isotropic metric (derivative in ``log gamma``), three for
    a per-axis metric (``log gamma_i``, ``log gamma_j``, ``log gamma_k``).
    """
    facs = g._factors
    c = g.scale
    rc = np.sqrt(c)
    d_gauss = [f.gauss * f.sqdist / g.params.axes[ax] ** 2 for ax, f in enumerate(facs)]
    d_sqrt = []
    for f, de in zip(facs, d_gauss):
        m = f.evecs.T @ de @ f.evecs
        rs = np.sqrt(f.evals)
        d_sqrt.append(f.evecs @ (m / (rs[:, None] + rs[None, :])) @ f.evecs.T)

    def swap(mats, ax, repl):
        out = list(mats)
        out[ax] = repl
        return _kron(out)

    gauss = [f.gauss for f in facs]
    sqrt = [f.sqrt for f in facs]
    full_g = _kron(gauss)
    full_s = _kron(sqrt)
    per_axis_g = [c * swap(gauss, ax, d_gauss[ax]) for ax in range(3)]
    per_axis_a = [rc * swap(sqrt, ax, d_sqrt[ax]) for ax in range(3)]
    if g.params.per_axis:
        # d log(prefactor) / d log gamma_axis = -2/3
        return [
            (per_axis_g[ax] - (2.0 / 3.0) * c * full_g, per_axis_a[ax] - (1.0 / 3.0) * rc * full_s)
            for ax in range(3)
        ]
    return [(sum(per_axis_g) - 2.0 * c * full_g, sum(per_axis_a) - rc * full_s)]


def write_metric_csv(g: MetricMatrix, path) -> None:
    """Dump the dense matrix as row-major CSV."""
    np.savetxt(path, g.g, delimiter=",", fmt="%.17g")
