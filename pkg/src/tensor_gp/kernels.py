"""Covariance functions over voxelized design tensors.

Six families share one interface:

``RBF``       ``s2 * exp(-d_E / (2 l))``, ``d_E`` the squared Euclidean
              distance of flattened designs (``l`` is in squared units).
``ARD-RBF``   ``s2 * exp(-1/2 sum_q (x_q - x'_q)^2 / l_q)``.
``IMED``      RBF on transformed features ``Z = A vec(X)``, where ``A`` is
              the square root of the voxel-proximity metric; equivalent to
              replacing ``d_E`` with the generalized distance ``d^T G d``.
``ARD-IMED``  ARD-RBF on ``Z``.
``WConv``     weighted sum of a patch-response ARD-RBF over all pairs of
              sliding patches.
``M-Lin``     multi-linear ``vec(X)^T (K_p (x) K_i (x) K_j (x) K_k) vec(X')``
              with ``K_n = U_n^T U_n``.

Kernel objects work on a *packed* hyperparameter vector: positive
quantities are stored as logs, patch weights and Kronecker factor entries
as raw values. :class:`KernelHyperparams` is the structured view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, ParameterError
from .metric import MetricParams, MetricTransform, build_metric, factorize, gamma_derivatives
from .tensor import DesignTensor, GridShape, stack

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "KernelHyperparams",
    "Kernel",
    "make_kernel",
    "rbf_eval",
    "ard_rbf_eval",
    "imed_eval",
    "ard_imed_eval",
    "extract_patches",
    "wconv_eval",
    "mlin_eval",
    "gram",
]

FAMILIES = ("RBF", "ARD-RBF", "IMED", "ARD-IMED", "WConv", "M-Lin")

_ALIASES = {f.lower().replace("-", "").replace("_", ""): f for f in FAMILIES}
_ALIASES.update({"wconv1": "WConv", "wconv2": "WConv", "mlin": "M-Lin", "linear": "M-Lin"})


def _canonical_family(name: str) -> str:
    key = str(name).lower().replace("-", "").replace("_", "")
    if key not in _ALIASES:
        raise ParameterError(f"unknown kernel family {name!r}; expected one of {FAMILIES}")
    return _ALIASES[key]


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its structural options.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES` (case and dashes are ignored).
    patch_shape : tuple of int, optional
        ``(v', h', w')`` patch extent, required for ``WConv``.
    base_kernel : str
        Patch-response kernel for ``WConv``; only ``"ARD-RBF"`` is supported.
    metric_params : MetricParams, optional
        Starting metric lengthscale for the IMED variants.
    per_axis_gamma : bool
        Learn one metric lengthscale per grid axis instead of one per property.
    """

    family: str
    patch_shape: Optional[tuple[int, int, int]] = None
    base_kernel: str = "ARD-RBF"
    metric_params: Optional[MetricParams] = None
    per_axis_gamma: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", _canonical_family(self.family))
        if self.family == "WConv":
            if self.patch_shape is None:
                raise ParameterError("WConv needs a patch_shape")
            ps = tuple(int(s) for s in self.patch_shape)
            if len(ps) == 2:
                ps = ps + (1,)
            if len(ps) != 3 or min(ps) < 1:
                raise ParameterError(f"bad patch_shape {self.patch_shape!r}")
            object.__setattr__(self, "patch_shape", ps)
            if _canonical_family(self.base_kernel) != "ARD-RBF":
                raise ParameterError("WConv supports only an ARD-RBF patch-response kernel")
            object.__setattr__(self, "base_kernel", "ARD-RBF")
        if self.metric_params is not None and not isinstance(self.metric_params, MetricParams):
            object.__setattr__(self, "metric_params", MetricParams(self.metric_params))

    @property
    def label(self) -> str:
        if self.family == "WConv":
            return "WConv[" + "x".join(str(s) for s in self.patch_shape) + "]"
        return self.family

    def to_dict(self) -> dict:
        out = {"family": self.family}
        if self.patch_shape is not None:
            out["patch_shape"] = list(self.patch_shape)
        if self.metric_params is not None:
            g = self.metric_params.gamma
            out["gamma"] = list(g) if isinstance(g, tuple) else g
        if self.per_axis_gamma:
            out["per_axis_gamma"] = True
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        d = dict(d)
        unknown = set(d) - {"family", "patch_shape", "gamma", "per_axis_gamma", "base_kernel"}
        if unknown:
            raise ParameterError(f"unknown kernel spec keys: {sorted(unknown)}")
        gamma = d.pop("gamma", None)
        ps = d.pop("patch_shape", None)
        return cls(
            family=d["family"],
            patch_shape=tuple(ps) if ps is not None else None,
            base_kernel=d.get("base_kernel", "ARD-RBF"),
            metric_params=MetricParams(tuple(gamma) if isinstance(gamma, list) else gamma)
            if gamma is not None else None,
            per_axis_gamma=bool(d.get("per_axis_gamma", False)),
        )


@dataclass
class KernelHyperparams:
    """Structured hyperparameters; unused fields stay ``None``.

    ``signal_variance`` is per property for WConv, ``lengthscales`` is
    ``(P, d_patch)`` for WConv, ``gamma`` is ``(P,)`` or ``(P, 3)`` and
    ``patch_weights`` is ``(M, P)``. ``kron_factors`` holds ``U`` matrices
    for the vertical, horizontal, depth and property modes.
    """

    signal_variance: Optional[np.ndarray | float] = None
    lengthscales: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    patch_weights: Optional[np.ndarray] = None
    kron_factors: Optional[list[np.ndarray]] = field(default=None)

    def to_dict(self) -> dict:
        def conv(v):
            if v is None:
                return None
            if isinstance(v, list):
                return [np.asarray(m).tolist() for m in v]
            return np.asarray(v).tolist()

        return {k: conv(v) for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparams":
        kw = {}
        for k, v in d.items():
            if k == "kron_factors":
                kw[k] = [np.asarray(m, dtype=float) for m in v]
            elif k == "signal_variance" and np.ndim(v) == 0:
                kw[k] = float(v)
            else:
                kw[k] = np.asarray(v, dtype=float)
        return cls(**kw)


# -- shared numerics --------------------------------------------------------

def _sqdist(a: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows."""
    if b is None:
        sq = np.einsum("ij,ij->i", a, a)
        d = sq[:, None] + sq[None, :] - 2.0 * (a @ a.T)
        np.fill_diagonal(d, 0.0)
    else:
        d = (np.einsum("ij,ij->i", a, a)[:, None] + np.einsum("ij,ij->i", b, b)[None, :]
             - 2.0 * (a @ b.T))
    return np.maximum(d, 0.0)


def _center(x: np.ndarray, x2: Optional[np.ndarray]):
    # distances are shift invariant; centering limits cancellation
    c = x.mean(axis=0)
    return x - c, (None if x2 is None else x2 - c)


def _ard_lengthscale_grad(x: np.ndarray, c: np.ndarray, ls: np.ndarray) -> np.ndarray:
    """``sum_ij C_ij (x_iq - x_jq)^2 / (2 l_q)`` for symmetric ``C``."""
    r = c.sum(axis=1)
    return (r @ (x * x) - np.einsum("iq,iq->q", x, c @ x)) / ls


def _sym(b: np.ndarray) -> np.ndarray:
    return 0.5 * (b + b.T)


class Kernel:
    """Base class: a kernel family bound to a grid shape.

    All array arguments ``x`` are stacked batches of shape
    ``(n, p, v*h*w)`` (see :func:`tensor_gp.tensor.stack`).
    """

    family: str = ""
    stationary = True
    uses_mean = True

    def __init__(self, spec: KernelSpec, shape: GridShape):
        self.spec = spec
        self.shape = shape

    # packing
    @property
    def n_params(self) -> int:
        return len(self.names)

    @property
    def names(self) -> list[str]:
        raise NotImplementedError

    def pack(self, hp: KernelHyperparams) -> np.ndarray:
        raise NotImplementedError

    def unpack(self, vec) -> KernelHyperparams:
        raise NotImplementedError

    def _vec(self, theta) -> np.ndarray:
        if isinstance(theta, KernelHyperparams):
            return self.pack(theta)
        vec = np.asarray(theta, dtype=float)
        if vec.shape != (self.n_params,):
            raise ParameterError(f"{self.family}: expected {self.n_params} packed parameters, got {vec.shape}")
        return vec

    # evaluation
    def gram(self, theta, x, x2=None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def grad_dot(self, theta, x, b) -> np.ndarray:
        """Contract every Gram derivative with ``b``.

        Returns ``g`` with ``g[t] = sum_ij b_ij dK_ij / dtheta_t`` for the
        training Gram ``K = gram(theta, x)``; ``b`` is symmetrized first.
        """
        raise NotImplementedError

    # optimization support
    def distance_scale(self, vec, x) -> float:
        """Median pairwise squared distance in the kernel's feature space."""
        return 1.0

    def initial(self, x, y, rng: Optional[np.random.Generator], ranges: Optional[dict] = None) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, x, y) -> list[tuple[Optional[float], Optional[float]]]:
        raise NotImplementedError

    def default_hyperparams(self) -> KernelHyperparams:
        raise NotImplementedError

    def _check(self, x):
        if x.ndim != 3 or x.shape[1:] != (self.shape.p, self.shape.n_voxels):
            raise DimensionError(f"{self.family}: input batch {x.shape} does not match grid {self.shape}")


def _median_sqdist(feats: np.ndarray, max_rows: int = 400) -> float:
    f = feats[:max_rows]
    if len(f) < 2:
        return 1.0
    d = _sqdist(*_center(f, None))
    iu = np.triu_indices(len(f), 1)
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


def _signal_scale(y) -> float:
    v = float(np.var(y)) if y is not None and len(y) > 1 else 1.0
    return v if v > 1e-12 else 1.0


def _draw(rng, ranges, name, lo, hi, size=None):
    """Uniform draw from ``ranges[name]`` or ``(lo, hi)``; the midpoint when ``rng`` is None."""
    lo, hi = (ranges or {}).get(name, (lo, hi))
    if rng is None:
        return np.full(size, 0.5 * (lo + hi)) if size is not None else 0.5 * (lo + hi)
    return rng.uniform(lo, hi, size=size)


def _jitter(rng, scale, size):
    return np.zeros(size) if rng is None else scale * rng.standard_normal(size)


# -- stationary squared-exponential family ----------------------------------

class _SEKernel(Kernel):
    """Shared machinery for RBF, ARD-RBF, IMED and ARD-IMED."""

    ard = False
    imed = False

    def __init__(self, spec, shape):
        super().__init__(spec, shape)
        self.family = spec.family
        self.n_feat = shape.size
        self.n_ls = self.n_feat if self.ard else 1
        self.n_gamma = (3 if spec.per_axis_gamma else 1) * shape.p if self.imed else 0

    @property
    def names(self):
        out = ["log_signal_variance"]
        out += ["log_lengthscale"] if not self.ard else [f"log_lengthscale[{q}]" for q in range(self.n_ls)]
        if self.imed:
            if self.spec.per_axis_gamma:
                out += [f"log_gamma[{q},{ax}]" for q in range(self.shape.p) for ax in "ijk"]
            else:
                out += [f"log_gamma[{q}]" for q in range(self.shape.p)]
        return out

    def _split(self, vec):
        s2 = np.exp(vec[0])
        ls = np.exp(vec[1:1 + self.n_ls])
        lg = vec[1 + self.n_ls:]
        return s2, ls, lg

    def _metrics(self, lg) -> list:
        if not self.imed:
            return []
        per = 3 if self.spec.per_axis_gamma else 1
        out = []
        for q in range(self.shape.p):
            g = np.exp(lg[q * per:(q + 1) * per])
            out.append(build_metric(self.shape, MetricParams(tuple(g) if per == 3 else float(g[0]))))
        return out

    def metric_transforms(self, theta) -> list[MetricTransform]:
        _, _, lg = self._split(self._vec(theta))
        return [factorize(m) for m in self._metrics(lg)]

    def features(self, vec, x) -> np.ndarray:
        """Flattened (and, for IMED variants, transformed) inputs."""
        if not self.imed:
            return x.reshape(len(x), -1)
        _, _, lg = self._split(vec)
        ts = [factorize(m) for m in self._metrics(lg)]
        return np.concatenate([ts[q].apply(x[:, q, :]) for q in range(self.shape.p)], axis=1)

    def _scaled(self, z, ls):
        return z / np.sqrt(ls) if self.ard else z / np.sqrt(ls[0])

    def gram(self, theta, x, x2=None):
        vec = self._vec(theta)
        self._check(x)
        s2, ls, _ = self._split(vec)
        z = self.features(vec, x)
        z2 = None
        if x2 is not None:
            self._check(x2)
            z2 = self.features(vec, x2)
        z, z2 = _center(z, z2)
        d = _sqdist(self._scaled(z, ls), None if z2 is None else self._scaled(z2, ls))
        return s2 * np.exp(-0.5 * d)

    def diag(self, theta, x):
        vec = self._vec(theta)
        return np.full(len(x), np.exp(vec[0]))

    def grad_dot(self, theta, x, b):
        vec = self._vec(theta)
        self._check(x)
        b = _sym(np.asarray(b, dtype=float))
        s2, ls, lg = self._split(vec)
        z, _ = _center(self.features(vec, x), None)
        zs = self._scaled(z, ls)
        k = s2 * np.exp(-0.5 * _sqdist(zs, None))
        c = b * k
        out = np.empty(self.n_params)
        out[0] = c.sum()
        if self.ard:
            out[1:1 + self.n_ls] = _ard_lengthscale_grad(z, c, ls)
        else:
            out[1] = _ard_lengthscale_grad(zs, c, np.ones(1)).sum()
        if self.imed:
            out[1 + self.n_ls:] = self._gamma_grad(vec, x, z, c, ls, lg)
        return out

    def _gamma_grad(self, vec, x, z, c, ls, lg):
        xc = x - x.mean(axis=0)
        r = c.sum(axis=1)
        grads = []
        nv = self.shape.n_voxels
        for q, m in enumerate(self._metrics(lg)):
            xq = xc[:, q, :]
            zq = z[:, q * nv:(q + 1) * nv]
            for dg, da in gamma_derivatives(m):
                if self.ard:
                    dz = xq @ da.T
                    w = 1.0 / ls[q * nv:(q + 1) * nv]
                    t = 2.0 * np.einsum("i,iq,iq->", r, zq * w, dz) - 2.0 * np.einsum("iq,iq->", zq * w, c @ dz)
                    grads.append(-t)
                else:
                    xm = xq @ dg
                    quad = 2.0 * (r @ np.einsum("iq,iq->i", xm, xq)) - 2.0 * np.einsum("ij,ij->", c, xm @ xq.T)
                    grads.append(-quad / (2.0 * ls[0]))
        return np.array(grads)

    def distance_scale(self, vec, x):
        return _median_sqdist(self.features(vec, x))

    def _gamma_start(self):
        axes = np.log((self.spec.metric_params or MetricParams(1.0)).axes)
        start = axes if self.spec.per_axis_gamma else [axes.mean()]
        return np.tile(start, self.shape.p)

    def default_hyperparams(self):
        vec = np.concatenate([[0.0], np.zeros(self.n_ls), self._gamma_start() if self.imed else []])
        return self.unpack(vec)

    def initial(self, x, y, rng, ranges=None):
        var = _signal_scale(y)
        vec = np.zeros(self.n_params)
        vec[0] = _draw(rng, ranges, "log_signal_variance", np.log(0.1 * var), np.log(10 * var))
        if self.imed:
            vec[1 + self.n_ls:] = _draw(rng, ranges, "log_gamma", np.log(0.3), np.log(3.0), size=self.n_gamma)
        dbar = self.distance_scale(vec, x)
        vec[1:1 + self.n_ls] = _draw(rng, ranges, "log_lengthscale", np.log(0.25 * dbar), np.log(4 * dbar))
        return vec

    def bounds(self, x, y):
        var = _signal_scale(y)
        vec = self.pack(self.default_hyperparams())
        dbar = self.distance_scale(vec, x)
        out = [(np.log(1e-8 * var), np.log(1e4 * var))]
        out += [(np.log(1e-4 * dbar), np.log(1e6 * dbar))] * self.n_ls
        out += [(np.log(0.05), np.log(8.0))] * self.n_gamma
        return out

    def pack(self, hp):
        parts = [[np.log(float(hp.signal_variance))]]
        ls = np.atleast_1d(np.asarray(hp.lengthscales, dtype=float)).ravel()
        if ls.size == 1 and self.n_ls > 1:
            ls = np.full(self.n_ls, ls[0])
        if ls.size != self.n_ls:
            raise ParameterError(f"{self.family}: expected {self.n_ls} lengthscales, got {ls.size}")
        parts.append(np.log(ls))
        if self.imed:
            g = np.asarray(hp.gamma if hp.gamma is not None else np.exp(self._gamma_start()), dtype=float).ravel()
            if g.size == 1 and self.n_gamma > 1:
                g = np.full(self.n_gamma, g[0])
            if g.size != self.n_gamma:
                raise ParameterError(f"{self.family}: expected {self.n_gamma} gamma values, got {g.size}")
            parts.append(np.log(g))
        vec = np.concatenate(parts)
        if not np.all(np.isfinite(vec)):
            raise ParameterError(f"{self.family}: hyperparameters must be positive and finite")
        return vec

    def unpack(self, vec):
        vec = np.asarray(vec, dtype=float)
        s2, ls, lg = self._split(vec)
        gamma = None
        if self.imed:
            gamma = np.exp(lg).reshape(self.shape.p, 3) if self.spec.per_axis_gamma else np.exp(lg)
        return KernelHyperparams(signal_variance=float(s2), lengthscales=ls, gamma=gamma)


class RBFKernel(_SEKernel):
    pass


class ARDRBFKernel(_SEKernel):
    ard = True


class IMEDKernel(_SEKernel):
    imed = True


class ARDIMEDKernel(_SEKernel):
    ard = True
    imed = True


# -- weighted convolutional -------------------------------------------------

def _patch_batch(x: np.ndarray, shape: GridShape, patch: tuple[int, int, int]) -> np.ndarray:
    """``(n, M, p, d)`` patches from an ``(n, p, v*h*w)`` batch."""
    pv, ph, pw = patch
    if pv > shape.v or ph > shape.h or pw > shape.w:
        raise DimensionError(f"patch {patch} does not fit grid {shape}")
    grid = x.reshape(len(x), shape.p, shape.v, shape.h, shape.w)
    win = sliding_window_view(grid, patch, axis=(2, 3, 4))
    n, p, mv, mh, mw = win.shape[:5]
    win = win.reshape(n, p, mv * mh * mw, pv * ph * pw)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3))


class WConvKernel(Kernel):
    """Weighted convolutional kernel with ARD-RBF patch responses.

    ``k(X, X') = sum_p sum_{m, m'} w_mp w_m'p k_p(X[m, p], X'[m', p])``.
    Patch responses of different properties are independent GPs, so
    cross-property terms vanish.
    """

    family = "WConv"
    stationary = False

    def __init__(self, spec, shape):
        super().__init__(spec, shape)
        self.patch = spec.patch_shape
        pv, ph, pw = self.patch
        if pv > shape.v or ph > shape.h or pw > shape.w:
            raise DimensionError(f"patch {self.patch} does not fit grid {shape}")
        self.n_patches = (shape.v - pv + 1) * (shape.h - ph + 1) * (shape.w - pw + 1)
        self.d = pv * ph * pw

    @property
    def names(self):
        p = self.shape.p
        out = []
        for q in range(p):
            out.append(f"log_signal_variance[{q}]" if p > 1 else "log_signal_variance")
            out += [f"log_lengthscale[{q},{t}]" if p > 1 else f"log_lengthscale[{t}]" for t in range(self.d)]
        out += [f"weight[{m},{q}]" for m in range(self.n_patches) for q in range(p)]
        return out

    def _split(self, vec):
        p, d = self.shape.p, self.d
        base = vec[:p * (d + 1)].reshape(p, d + 1)
        s2 = np.exp(base[:, 0])
        ls = np.exp(base[:, 1:])
        w = vec[p * (d + 1):].reshape(self.n_patches, p)
        return s2, ls, w

    def patches(self, x):
        return _patch_batch(x, self.shape, self.patch)

    def _patch_gram(self, s2, ls, pa, pb=None):
        n, m = pa.shape[:2]
        fa = pa.reshape(n * m, -1) / np.sqrt(ls)
        fb = None
        if pb is not None:
            fb = pb.reshape(pb.shape[0] * m, -1) / np.sqrt(ls)
        fa, fb = _center(fa, fb)
        k = s2 * np.exp(-0.5 * _sqdist(fa, fb))
        return k.reshape(n, m, -1, m)

    def gram(self, theta, x, x2=None):
        vec = self._vec(theta)
        self._check(x)
        s2, ls, w = self._split(vec)
        pa = self.patches(x)
        pb = None
        if x2 is not None:
            self._check(x2)
            pb = self.patches(x2)
        out = 0.0
        for q in range(self.shape.p):
            kq = self._patch_gram(s2[q], ls[q], pa[:, :, q], None if pb is None else pb[:, :, q])
            out = out + np.einsum("m,imjn,n->ij", w[:, q], kq, w[:, q])
        return out

    def diag(self, theta, x):
        vec = self._vec(theta)
        s2, ls, w = self._split(vec)
        pa = self.patches(x)
        out = np.zeros(len(x))
        for q in range(self.shape.p):
            f = pa[:, :, q] / np.sqrt(ls[q])
            d = ((f[:, :, None, :] - f[:, None, :, :]) ** 2).sum(-1)
            out += np.einsum("m,imn,n->i", w[:, q], s2[q] * np.exp(-0.5 * d), w[:, q])
        return out

    def grad_dot(self, theta, x, b):
        vec = self._vec(theta)
        self._check(x)
        b = _sym(np.asarray(b, dtype=float))
        s2, ls, w = self._split(vec)
        pa = self.patches(x)
        n, m = pa.shape[:2]
        p, d = self.shape.p, self.d
        base = np.empty((p, d + 1))
        gw = np.empty((m, p))
        for q in range(p):
            kq = self._patch_gram(s2[q], ls[q], pa[:, :, q])
            wq = w[:, q]
            c4 = b[:, None, :, None] * wq[None, :, None, None] * wq[None, None, None, :] * kq
            c = c4.reshape(n * m, n * m)
            feats, _ = _center(pa[:, :, q].reshape(n * m, d), None)
            base[q, 0] = c.sum()
            base[q, 1:] = _ard_lengthscale_grad(feats, c, ls[q])
            t = np.einsum("ij,imjn->mn", b, kq)
            gw[:, q] = (t + t.T) @ w[:, q]
        return np.concatenate([base.ravel(), gw.ravel()])

    def distance_scale(self, vec, x):
        pa = self.patches(x[:200])
        return _median_sqdist(pa.reshape(-1, self.d))

    def default_hyperparams(self):
        p = self.shape.p
        return KernelHyperparams(
            signal_variance=np.ones(p),
            lengthscales=np.ones((p, self.d)),
            patch_weights=np.full((self.n_patches, p), 1.0 / np.sqrt(self.n_patches)),
        )

    def initial(self, x, y, rng, ranges=None):
        var = _signal_scale(y)
        p, d, m = self.shape.p, self.d, self.n_patches
        dbar = self.distance_scale(None, x)
        base = np.empty((p, d + 1))
        base[:, 0] = _draw(rng, ranges, "log_signal_variance", np.log(0.1 * var), np.log(10 * var), size=p)
        base[:, 1:] = _draw(rng, ranges, "log_lengthscale", np.log(0.25 * dbar), np.log(4 * dbar), size=(p, 1))
        w = (1.0 + _jitter(rng, 0.1, (m, p))) / np.sqrt(m)
        return np.concatenate([base.ravel(), w.ravel()])

    def bounds(self, x, y):
        var = _signal_scale(y)
        dbar = self.distance_scale(None, x)
        one = [(np.log(1e-8 * var), np.log(1e4 * var))] + [(np.log(1e-4 * dbar), np.log(1e6 * dbar))] * self.d
        return one * self.shape.p + [(None, None)] * (self.n_patches * self.shape.p)

    def pack(self, hp):
        p, d, m = self.shape.p, self.d, self.n_patches
        s2 = np.broadcast_to(np.asarray(hp.signal_variance, dtype=float), (p,))
        ls = np.asarray(hp.lengthscales, dtype=float)
        if ls.size in (1, d):
            ls = np.broadcast_to(ls.reshape(-1), (p, d))
        if ls.shape != (p, d):
            raise ParameterError(f"WConv: expected lengthscales of shape {(p, d)}, got {ls.shape}")
        w = np.asarray(hp.patch_weights, dtype=float)
        if w.size != m * p:
            raise ParameterError(f"WConv: expected {m * p} patch weights, got {w.size}")
        base = np.concatenate([np.log(s2)[:, None], np.log(ls)], axis=1)
        vec = np.concatenate([base.ravel(), w.reshape(m, p).ravel()])
        if not np.all(np.isfinite(vec)):
            raise ParameterError("WConv: hyperparameters must be positive and finite")
        return vec

    def unpack(self, vec):
        s2, ls, w = self._split(np.asarray(vec, dtype=float))
        return KernelHyperparams(signal_variance=s2, lengthscales=ls, patch_weights=w.copy())


# -- multi-linear -----------------------------------------------------------

class MLinKernel(Kernel):
    """Multi-linear kernel with factors ``K_n = U_n^T U_n`` per tensor mode.

    Modes are ordered (vertical, horizontal, depth, property). Modes of
    length one carry a fixed ``U = [[1]]``; they would only duplicate the
    overall scale.
    """

    family = "M-Lin"
    stationary = False
    uses_mean = False

    def __init__(self, spec, shape):
        super().__init__(spec, shape)
        self.dims = (shape.v, shape.h, shape.w, shape.p)
        self.free = [ax for ax, n in enumerate(self.dims) if n > 1]

    @property
    def names(self):
        out = []
        for ax in self.free:
            n = self.dims[ax]
            out += [f"U{ax + 1}[{a},{b}]" for a in range(n) for b in range(n)]
        return out

    def factors(self, vec) -> list[np.ndarray]:
        out, pos = [], 0
        for ax, n in enumerate(self.dims):
            if ax in self.free:
                out.append(vec[pos:pos + n * n].reshape(n, n))
                pos += n * n
            else:
                out.append(np.ones((1, 1)))
        return out

    def _grid(self, x):
        s = self.shape
        # (n, v, h, w, p) so tensor axis a+1 is mode a
        return np.moveaxis(x.reshape(len(x), s.p, s.v, s.h, s.w), 1, -1)

    @staticmethod
    def _mode(t, u, ax):
        return np.moveaxis(np.tensordot(u, t, axes=(1, ax + 1)), 0, ax + 1)

    def features(self, vec, x, skip=None):
        t = self._grid(x)
        for ax, u in enumerate(self.factors(vec)):
            if ax != skip:
                t = self._mode(t, u, ax)
        return t

    def gram(self, theta, x, x2=None):
        vec = self._vec(theta)
        self._check(x)
        f = self.features(vec, x).reshape(len(x), -1)
        if x2 is None:
            return f @ f.T
        self._check(x2)
        return f @ self.features(vec, x2).reshape(len(x2), -1).T

    def diag(self, theta, x):
        f = self.features(self._vec(theta), x).reshape(len(x), -1)
        return np.einsum("ij,ij->i", f, f)

    def grad_dot(self, theta, x, b):
        vec = self._vec(theta)
        b = _sym(np.asarray(b, dtype=float))
        us = self.factors(vec)
        out = []
        for ax in self.free:
            t = np.moveaxis(self.features(vec, x, skip=ax), ax + 1, 1)
            t = t.reshape(len(x), self.dims[ax], -1)
            bt = np.tensordot(b, t, axes=(1, 0))
            c = np.einsum("nvr,nwr->vw", t, bt)
            out.append((2.0 * us[ax] @ c).ravel())
        return np.concatenate(out) if out else np.zeros(0)

    def default_hyperparams(self):
        return KernelHyperparams(kron_factors=[np.eye(n) for n in self.dims])

    def initial(self, x, y, rng, ranges=None):
        return np.concatenate([(np.eye(self.dims[ax]) + _jitter(rng, 0.01, (self.dims[ax],) * 2)).ravel()
                               for ax in self.free])

    def bounds(self, x, y):
        return [(None, None)] * self.n_params

    def pack(self, hp):
        fs = hp.kron_factors
        if fs is None or len(fs) != 4:
            raise ParameterError("M-Lin needs four Kronecker factors (vertical, horizontal, depth, property)")
        parts = []
        for ax, n in enumerate(self.dims):
            u = np.asarray(fs[ax], dtype=float)
            if u.shape != (n, n):
                raise ParameterError(f"M-Lin factor {ax + 1} must be {n}x{n}, got {u.shape}")
            if ax in self.free:
                parts.append(u.ravel())
            elif abs(u[0, 0]) != 1.0:
                raise ParameterError(f"M-Lin factor {ax + 1} has length one and is fixed to [[1]]")
        return np.concatenate(parts) if parts else np.zeros(0)

    def unpack(self, vec):
        return KernelHyperparams(kron_factors=[u.copy() for u in self.factors(np.asarray(vec, dtype=float))])


_CLASSES = {
    "RBF": RBFKernel,
    "ARD-RBF": ARDRBFKernel,
    "IMED": IMEDKernel,
    "ARD-IMED": ARDIMEDKernel,
    "WConv": WConvKernel,
    "M-Lin": MLinKernel,
}


def make_kernel(spec: KernelSpec | str, shape: GridShape) -> Kernel:
    """Bind a kernel family to a grid shape."""
    if not isinstance(spec, KernelSpec):
        spec = KernelSpec(spec)
    return _CLASSES[spec.family](spec, shape)


# -- pointwise convenience API ----------------------------------------------

def _pair(x: DesignTensor, x2: DesignTensor):
    if x.shape != x2.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x2.shape}")
    return stack([x]), stack([x2])


def _eval(family, x, x2, theta, **spec_kw):
    a, b = _pair(x, x2)
    k = make_kernel(KernelSpec(family, **spec_kw), x.shape)
    return float(k.gram(theta, a, b)[0, 0])


def rbf_eval(x: DesignTensor, x2: DesignTensor, theta: KernelHyperparams) -> float:
    """Isotropic RBF covariance between two designs."""
    return _eval("RBF", x, x2, theta)


def ard_rbf_eval(x: DesignTensor, x2: DesignTensor, theta: KernelHyperparams) -> float:
    """RBF covariance with one lengthscale per flattened input entry."""
    return _eval("ARD-RBF", x, x2, theta)


def _transformed_eval(ard, x, x2, theta, metric):
    from .metric import transform

    ts = metric if isinstance(metric, (list, tuple)) else [metric] * x.shape.p
    z, z2 = transform(x, ts), transform(x2, ts)
    s2 = float(theta.signal_variance)
    ls = np.asarray(theta.lengthscales, dtype=float).ravel()
    if np.any(ls <= 0) or s2 <= 0:
        raise ParameterError("signal variance and lengthscales must be positive")
    if not ard:
        ls = ls[:1]
    elif ls.size != z.size:
        raise ParameterError(f"expected {z.size} lengthscales, got {ls.size}")
    return s2 * float(np.exp(-0.5 * np.sum((z - z2) ** 2 / ls)))


def imed_eval(x: DesignTensor, x2: DesignTensor, theta: KernelHyperparams,
              metric: MetricTransform | Sequence[MetricTransform]) -> float:
    """IMED covariance: RBF on features transformed by ``metric``."""
    return _transformed_eval(False, x, x2, theta, metric)


def ard_imed_eval(x: DesignTensor, x2: DesignTensor, theta: KernelHyperparams,
                  metric: MetricTransform | Sequence[MetricTransform]) -> float:
    """ARD-IMED covariance: ARD-RBF on features transformed by ``metric``."""
    return _transformed_eval(True, x, x2, theta, metric)


def extract_patches(x: DesignTensor, patch: tuple[int, int, int]) -> np.ndarray:
    """All sliding patches of ``x`` as an ``(M, p, v'*h'*w')`` array.

    Patches are ordered by the canonical index of their origin voxel and
    flattened canonically.
    """
    patch = tuple(int(s) for s in patch)
    if len(patch) == 2:
        patch = patch + (1,)
    return _patch_batch(stack([x]), x.shape, patch)[0]


def wconv_eval(x: DesignTensor, x2: DesignTensor, spec: KernelSpec, theta: KernelHyperparams) -> float:
    """Weighted convolutional covariance between two designs."""
    a, b = _pair(x, x2)
    return float(make_kernel(spec, x.shape).gram(theta, a, b)[0, 0])


def mlin_eval(x: DesignTensor, x2: DesignTensor, theta: KernelHyperparams) -> float:
    """Multi-linear covariance between two designs."""
    return _eval("M-Lin", x, x2, theta)


def gram(spec: KernelSpec | str, theta: KernelHyperparams, xs, xs2=None) -> np.ndarray:
    """Covariance matrix between two lists of designs (``xs2`` defaults to ``xs``)."""
    a = stack(xs)
    shape = xs[0].shape if not isinstance(xs, np.ndarray) else None
    if shape is None:
        raise DimensionError("gram() takes lists of DesignTensor; use Kernel.gram for raw arrays")
    k = make_kernel(spec, shape)
    return k.gram(theta, a, None if xs2 is None else stack(xs2, shape))
