"""Dataset directories, splits, space-filling designs and synthetic data.

A dataset directory holds three files:

``meta.json``
    ``{"name": str, "shape": {"v", "h", "w", "p"}, "angles": {"lo", "hi",
    "full_circle"}}`` plus optional ``"truth"`` for synthetic data.
``inputs.csv``
    Header of flat indices ``0 .. v*h*w*p - 1``; one design per row in
    canonical order.
``outputs.csv``
    Header of angles in degrees; one linear-scale gain curve per row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from ..errors import ConditioningError, LoadError, ParameterError
from ..fdr import build_basis
from ..gp import DEFAULT_NOISE
from ..kernels import KernelHyperparams, KernelSpec, make_kernel
from ..tensor import DesignTensor, GridShape

__all__ = [
    "Dataset",
    "load_dataset",
    "save_dataset",
    "from_matrices",
    "split",
    "lhd_sample",
    "synth_generate",
    "default_truth",
    "DIELECTRIC_RANGE",
]

DIELECTRIC_RANGE = (1.1, 2.3)


@dataclass
class Dataset:
    name: str
    shape: GridShape
    inputs: np.ndarray   # (N, v*h*w*p), canonical order
    angles: np.ndarray   # (l,)
    outputs: np.ndarray  # (N, l)
    domain: tuple[float, float] = (0.0, 180.0)
    full_circle: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.outputs = np.asarray(self.outputs, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        if len(self.inputs) < 1:
            raise LoadError("dataset has no samples")
        if self.inputs.shape[1] != self.shape.size:
            raise LoadError(f"inputs have {self.inputs.shape[1]} columns, grid {self.shape} needs {self.shape.size}")
        if self.outputs.shape != (len(self.inputs), len(self.angles)):
            raise LoadError(f"outputs shape {self.outputs.shape} does not match "
                            f"{len(self.inputs)} samples x {len(self.angles)} angles")

    def __len__(self):
        return len(self.inputs)

    @property
    def batch(self) -> np.ndarray:
        """Inputs as an ``(N, p, v*h*w)`` batch."""
        return self.inputs.reshape(len(self), self.shape.p, self.shape.n_voxels)

    def design(self, n: int) -> DesignTensor:
        return DesignTensor(self.shape, self.inputs[n])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.name, self.shape, self.inputs[idx], self.angles, self.outputs[idx],
                       self.domain, self.full_circle, dict(self.meta))


def _read_csv(path: Path, header_kind: str):
    if not path.is_file():
        raise LoadError(f"missing file {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path.name}: empty file")
    try:
        header = [float(h) for h in rows[0]]
    except ValueError as exc:
        raise LoadError(f"{path.name}: header must be numeric {header_kind}: {exc}") from None
    data = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise LoadError(f"{path.name}: row {r} has {len(row)} columns, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                val = float(cell)
            except ValueError:
                raise LoadError(f"{path.name}: row {r}, column {c}: not a number ({cell!r})") from None
            if not math.isfinite(val):
                raise LoadError(f"{path.name}: row {r}, column {c}: non-finite value")
            data[r - 1, c] = val
    return np.asarray(header), data


def load_dataset(root) -> Dataset:
    """Read and validate a dataset directory."""
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise LoadError(f"missing file {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        shape = GridShape(**meta["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"meta.json: invalid ({exc})") from None
    cols, inputs = _read_csv(root / "inputs.csv", "flat indices")
    if not np.array_equal(cols, np.arange(len(cols))):
        raise LoadError("inputs.csv: header must list flat indices 0..D-1 in order")
    angles, outputs = _read_csv(root / "outputs.csv", "angles")
    if len(inputs) != len(outputs):
        raise LoadError(f"inputs.csv has {len(inputs)} rows but outputs.csv has {len(outputs)}")
    ang_meta = meta.get("angles", {})
    lo = float(ang_meta.get("lo", angles.min()))
    hi = float(ang_meta.get("hi", angles.max()))
    return Dataset(
        name=str(meta.get("name", root.name)), shape=shape, inputs=inputs, angles=angles,
        outputs=outputs, domain=(lo, hi), full_circle=bool(ang_meta.get("full_circle", False)),
        meta=meta,
    )


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: Dataset, root) -> Path:
    """Write ``ds`` in the directory format read by :func:`load_dataset`."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta.update({
        "name": ds.name,
        "shape": ds.shape.to_dict(),
        "angles": {"lo": ds.domain[0], "hi": ds.domain[1], "full_circle": ds.full_circle},
    })
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    with open(root / "inputs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(range(ds.shape.size))
        w.writerows([_fmt(v) for v in row] for row in ds.inputs)
    with open(root / "outputs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{a:g}" for a in ds.angles])
        w.writerows([_fmt(v) for v in row] for row in ds.outputs)
    return root


def from_matrices(name: str, shape: GridShape, inputs, outputs, angles=None,
                  input_order: str = "canonical", full_circle: Optional[bool] = None) -> Dataset:
    """Adapter from plain matrices exported by another tool.

    ``input_order="vhwp"`` accepts rows flattened C-order from a
    ``(v, h, w, p)`` array; ``"canonical"`` rows are used as is.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if input_order == "vhwp":
        x = np.moveaxis(x.reshape(len(x), shape.v, shape.h, shape.w, shape.p), -1, 1).reshape(len(x), -1)
    elif input_order != "canonical":
        raise ParameterError(f"unknown input_order {input_order!r}")
    ang = np.arange(y.shape[1], dtype=float) if angles is None else np.asarray(angles, dtype=float)
    if full_circle is None:
        full_circle = len(ang) >= 360
    domain = (0.0, 360.0) if full_circle else (float(ang.min()), float(ang.max()))
    return Dataset(name, shape, x, ang, y, domain, full_circle)


def split(n: int | Dataset, ratio: float = 0.8, seed: int = 0):
    """Seeded disjoint train/test index split of sizes ``floor(ratio*n)`` / rest."""
    n = len(n) if isinstance(n, Dataset) else int(n)
    if not 0 < ratio < 1:
        raise ParameterError(f"split ratio must be in (0, 1), got {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(ratio * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


def lhd_sample(n: int, d: int, bounds: Sequence[tuple[float, float]] | tuple[float, float], seed: int = 0) -> np.ndarray:
    """Latin-hypercube design: one jittered point per stratum in every column."""
    if n < 1 or d < 1:
        raise ParameterError("n and d must be >= 1")
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = np.tile(b, (d, 1))
    if b.shape != (d, 2) or np.any(b[:, 1] <= b[:, 0]):
        raise ParameterError("bounds must be d intervals (lo, hi) with lo < hi")
    unit = qmc.LatinHypercube(d=d, scramble=True, seed=np.random.default_rng(seed)).random(n)
    return qmc.scale(unit, b[:, 0], b[:, 1])


def default_truth(kern, x) -> np.ndarray:
    """Unit signal variance with lengthscales at the median feature distance."""
    vec = kern.pack(kern.default_hyperparams())
    names = kern.names
    if any(n.startswith("log_lengthscale") for n in names):
        dbar = kern.distance_scale(vec, x)
        for t, n in enumerate(names):
            if n.startswith("log_lengthscale"):
                vec[t] = np.log(dbar)
    return vec


def synth_generate(shape: GridShape, spec: KernelSpec | str, theta_true: Optional[KernelHyperparams],
                   n: int, seed: int = 0, *, num_basis: int = 21, order: int = 4,
                   domain=(0.0, 180.0), angles=None, baseline=None, output_map: str = "identity",
                   noise: float = DEFAULT_NOISE, name: Optional[str] = None) -> Dataset:
    """Draw a dataset whose spline coefficients follow a known GP.

    Designs come from a Latin hypercube over the dielectric range. Each of
    the ``num_basis`` coefficients is an independent draw from
    ``GP(baseline_j, k)`` on those designs; curves are the rendered splines,
    optionally passed through ``exp`` to make positive gain patterns.
    ``theta_true=None`` picks :func:`default_truth`.
    """
    spec = spec if isinstance(spec, KernelSpec) else KernelSpec(spec)
    if output_map not in ("identity", "exp"):
        raise ParameterError(f"unknown output_map {output_map!r}")
    rng = np.random.default_rng(seed)
    x = lhd_sample(n, shape.size, DIELECTRIC_RANGE, seed=int(rng.integers(2**31)))
    kern = make_kernel(spec, shape)
    xb = x.reshape(n, shape.p, shape.n_voxels)
    theta_true = default_truth(kern, xb) if theta_true is None else kern._vec(theta_true)
    k = kern.gram(theta_true, xb)
    try:
        chol = np.linalg.cholesky(k + noise * np.eye(n))
    except np.linalg.LinAlgError:
        raise ConditioningError("prior Gram matrix of the synthetic design is not positive definite") from None
    basis = build_basis(domain, order, num_basis, angles)
    base = np.zeros(num_basis) if baseline is None else np.asarray(baseline, dtype=float)
    coefs = base + chol @ rng.standard_normal((n, num_basis))
    curves = coefs @ basis.basis_matrix.T
    if output_map == "exp":
        curves = np.exp(curves)
    meta = {
        "truth": {
            "kernel": spec.to_dict(),
            "hyperparams": kern.unpack(theta_true).to_dict(),
            "basis": {"order": order, "num_basis": num_basis},
            "baseline": base.tolist(),
            "output_map": output_map,
            "seed": seed,
        }
    }
    return Dataset(name or f"synthetic-{spec.family}", shape, x, basis.eval_grid, curves,
                   (float(domain[0]), float(domain[1])), False, meta)
