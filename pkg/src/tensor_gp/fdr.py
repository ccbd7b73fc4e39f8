"""B-spline reduction of functional (per-angle) outputs.

Each output curve is compressed to the coefficients of a clamped uniform
B-spline basis; one GP is trained per coefficient, and predicted
coefficient means and variances are mapped back to per-angle means and
variances assuming independent coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConditioningError, DimensionError, ParameterError

__all__ = [
    "BSplineBasis",
    "FunctionalPrediction",
    "clamped_uniform_knots",
    "cox_de_boor",
    "build_basis",
    "fit_coefficients",
    "reconstruct",
]


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    order: int
    num_basis: int
    knots: np.ndarray
    eval_grid: np.ndarray
    basis_matrix: np.ndarray  # (len(eval_grid), num_basis)

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])


@dataclass(frozen=True, eq=False)
class FunctionalPrediction:
    mean: np.ndarray
    variance: np.ndarray


def clamped_uniform_knots(lo: float, hi: float, order: int, num_basis: int) -> np.ndarray:
    """Open-uniform knots: ends repeated ``order`` times, interior evenly spaced."""
    n_interior = num_basis - order
    inner = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return np.concatenate([np.full(order, lo), inner, np.full(order, hi)])


def cox_de_boor(knots: np.ndarray, order: int, t: np.ndarray) -> np.ndarray:
    """Evaluate all B-splines of ``order`` (degree ``order - 1``) at ``t``.

    The last non-degenerate span is closed on the right so the basis is
    defined at the upper domain end.
    """
    knots = np.asarray(knots, dtype=float)
    t = np.asarray(t, dtype=float)
    n_funcs = len(knots) - order
    last = np.flatnonzero(knots[:-1] < knots[1:])[-1]
    # order 1: span indicators
    b = np.zeros((len(t), len(knots) - 1))
    for s in range(len(knots) - 1):
        if knots[s] < knots[s + 1]:
            right = (t <= knots[s + 1]) if s == last else (t < knots[s + 1])
            b[:, s] = (t >= knots[s]) & right
    for k in range(2, order + 1):
        nb = np.zeros((len(t), len(knots) - k))
        for s in range(len(knots) - k):
            d1 = knots[s + k - 1] - knots[s]
            d2 = knots[s + k] - knots[s + 1]
            if d1 > 0:
                nb[:, s] += (t - knots[s]) / d1 * b[:, s]
            if d2 > 0:
                nb[:, s] += (knots[s + k] - t) / d2 * b[:, s + 1]
        b = nb
    return b[:, :n_funcs]


def build_basis(domain: tuple[float, float], order: int, num_basis: int, grid=None) -> BSplineBasis:
    """Clamped uniform basis evaluated on ``grid``.

    ``grid`` is the array of evaluation angles, or a step size; it defaults
    to the integer degrees of the closed domain.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise ParameterError(f"empty domain [{lo}, {hi}]")
    if order < 1:
        raise ParameterError("spline order must be >= 1")
    if num_basis < order:
        raise ParameterError(f"num_basis ({num_basis}) must be >= order ({order})")
    if grid is None:
        grid = 1.0
    if np.ndim(grid) == 0:
        step = float(grid)
        grid = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
    grid = np.asarray(grid, dtype=float)
    if grid.min() < lo or grid.max() > hi:
        raise ParameterError("evaluation grid extends outside the domain")
    knots = clamped_uniform_knots(lo, hi, order, num_basis)
    bm = cox_de_boor(knots, order, grid)
    for arr in (knots, grid, bm):
        arr.setflags(write=False)
    return BSplineBasis(order, num_basis, knots, grid, bm)


def fit_coefficients(curve, basis: BSplineBasis, return_residual: bool = False):
    """Least-squares spline coefficients for one curve or a stack of curves.

    ``curve`` is length ``l`` or ``(N, l)``. With ``return_residual`` the
    residual norm per curve is returned as well.
    """
    y = np.asarray(curve, dtype=float)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    b = basis.basis_matrix
    if y2.shape[1] != b.shape[0]:
        raise DimensionError(f"curve length {y2.shape[1]} does not match basis grid {b.shape[0]}")
    q, r = sla.qr(b, mode="economic")
    rd = np.abs(np.diag(r))
    if rd.min() <= 1e-12 * rd.max():
        raise ConditioningError("basis matrix is rank deficient on this evaluation grid")
    coef = sla.solve_triangular(r, q.T @ y2.T).T
    resid = np.linalg.norm(y2 - coef @ b.T, axis=1)
    if single:
        coef, resid = coef[0], float(resid[0])
    return (coef, resid) if return_residual else coef


def reconstruct(coef_means, coef_vars, basis: BSplineBasis) -> FunctionalPrediction:
    """Per-angle mean ``B a`` and variance ``(B*B) s2`` from coefficient moments.

    Accepts a single coefficient vector or an ``(N, l')`` stack.
    """
    m = np.asarray(coef_means, dtype=float)
    v = np.asarray(coef_vars, dtype=float)
    if m.shape != v.shape or m.shape[-1] != basis.num_basis:
        raise DimensionError(f"coefficient arrays {m.shape}/{v.shape} do not match {basis.num_basis} basis functions")
    if np.any(v < 0):
        raise ParameterError("coefficient variances must be non-negative")
    b = basis.basis_matrix
    return FunctionalPrediction(mean=m @ b.T, variance=v @ (b * b).T)
