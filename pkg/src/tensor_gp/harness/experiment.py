"""Repeated train/test benchmark of kernel families on a functional dataset."""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..errors import ConfigError, ParameterError, TensorGPError
from ..fdr import build_basis, fit_coefficients, reconstruct
from ..gp import DEFAULT_NOISE, OptimizerConfig, count_hyperparameters, fit, predict
from ..kernels import KernelSpec
from ..metrics import evaluate, rmse
from .data import Dataset, load_dataset, split

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "PairedTest",
    "confidence_half_width",
    "paired_comparison",
    "run_experiment",
]

log = logging.getLogger(__name__)


def _spec(obj) -> KernelSpec:
    if isinstance(obj, KernelSpec):
        return obj
    if isinstance(obj, str):
        return KernelSpec(obj)
    return KernelSpec.from_dict(obj)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one benchmark run.

    ``seeds`` defaults to ``0 .. repeats-1``. ``mlin_repeats`` caps the
    repeat count for the costly M-Lin kernel (``None`` means no cap).
    ``max_samples`` truncates the dataset to its first rows.
    """

    dataset: Optional[str] = None
    kernels: list = field(default_factory=lambda: ["RBF", "ARD-RBF", "IMED", "ARD-IMED"])
    order: int = 4
    num_basis: int = 21
    split_ratio: float = 0.8
    repeats: int = 10
    seeds: Optional[list] = None
    optimizer: dict = field(default_factory=dict)
    output: Optional[str] = None
    standardize: bool = True
    half_width: float = 7.0
    noise: float = DEFAULT_NOISE
    workers: int = 1
    mlin_repeats: Optional[int] = 1
    max_samples: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.seeds is not None and len(self.seeds) < self.repeats:
            raise ConfigError(f"{self.repeats} repeats but only {len(self.seeds)} seeds")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.kernels = [_spec(k) for k in self.kernels]
            self.optimizer_config()
        except (ParameterError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def optimizer_config(self, seed: int = 0) -> OptimizerConfig:
        opts = dict(self.optimizer)
        opts.pop("seed", None)
        return OptimizerConfig(seed=seed, **opts)

    def seed_for(self, r: int) -> int:
        return int(self.seeds[r]) if self.seeds is not None else r


def confidence_half_width(values, level: float = 0.95) -> Optional[float]:
    """Half-width of a t-based confidence interval; ``None`` for one value."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return None
    return float(stats.t.ppf(0.5 + level / 2, len(v) - 1) * v.std(ddof=1) / np.sqrt(len(v)))


@dataclass
class ResultRow:
    kernel: str
    n_params: int
    n_repeats: int
    rmse: float
    rmse_ci: Optional[float]
    msll: float
    msll_ci: Optional[float]
    lobe_rmse: float
    lobe_rmse_ci: Optional[float]
    lobe_msll: float
    lobe_msll_ci: Optional[float]
    basis_floor_rmse: float
    seeds: list
    per_repeat: dict
    errors: list
    wall_time: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


@dataclass
class ResultTable:
    dataset: str
    rows: list

    def row(self, kernel: str) -> ResultRow:
        for r in self.rows:
            if r.kernel == kernel:
                return r
        raise KeyError(kernel)

    def to_dict(self, include_timing: bool = False) -> dict:
        return {"dataset": self.dataset, "rows": [r.to_dict(include_timing) for r in self.rows]}

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(_round_floats(self.to_dict(include_timing)), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ResultTable":
        names = {f.name for f in dataclasses.fields(ResultRow)}
        return cls(d["dataset"], [ResultRow(**{k: v for k, v in r.items() if k in names}) for r in d["rows"]])

    def to_text(self) -> str:
        def pm(mean, ci):
            if mean is None or not np.isfinite(mean):
                return "n/a"
            return f"{mean:.3f}" + (" ± n/a" if ci is None else f" ± {ci:.3f}")

        header = ["Kernel", "RMSE", "MSLL", "lobe RMSE", "lobe MSLL", "#params", "repeats"]
        body = [[r.kernel, pm(r.rmse, r.rmse_ci), pm(r.msll, r.msll_ci), pm(r.lobe_rmse, r.lobe_rmse_ci),
                 pm(r.lobe_msll, r.lobe_msll_ci), str(r.n_params), str(r.n_repeats)] for r in self.rows]
        widths = [max(len(row[c]) for row in [header] + body) for c in range(len(header))]
        lines = ["  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip() for row in [header] + body]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return f"dataset: {self.dataset}\n" + "\n".join(lines) + "\n"


def _round_floats(obj, digits: int = 12):
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}") if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


@dataclass
class PairedTest:
    t: float
    p_value: float
    n: int
    degenerate: bool = False


def paired_comparison(a: Sequence[float], b: Sequence[float]) -> PairedTest:
    """One-sided paired t-test of ``mean(a - b) < 0`` (``a`` better when smaller).

    Zero-variance differences are degenerate: ``t = 0, p = 0.5`` when all
    differences vanish, otherwise ``p`` is 0 or 1 by the sign of the
    difference and ``t`` is infinite.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ParameterError(f"paired samples must have equal length, got {a.shape} and {b.shape}")
    n = len(a)
    if n < 2:
        raise ParameterError("need at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    mean = d.mean()
    if sd <= 1e-15 * max(1.0, np.abs(d).max()):
        if mean == 0:
            return PairedTest(0.0, 0.5, n, degenerate=True)
        return PairedTest(float(-np.inf if mean < 0 else np.inf), 0.0 if mean < 0 else 1.0, n, degenerate=True)
    t = mean / (sd / np.sqrt(n))
    return PairedTest(float(t), float(stats.t.cdf(t, n - 1)), n)


def _fit_seed(split_seed: int, coef: int) -> int:
    return int(np.random.SeedSequence([int(split_seed), int(coef)]).generate_state(1)[0])


def _run_cell(ds, basis, coefs, spec, cfg, split_seed):
    """One (kernel, repeat) cell: per-coefficient GPs, reconstruction, metrics."""
    train, test = split(len(ds), cfg.split_ratio, split_seed)
    xb = ds.batch
    n_coef = coefs.shape[1]

    def one(j):
        y = coefs[train, j]
        loc, scale = (y.mean(), y.std()) if cfg.standardize else (0.0, 1.0)
        scale = scale if scale > 1e-12 else 1.0
        model = fit(xb[train], (y - loc) / scale, spec, cfg.optimizer_config(_fit_seed(split_seed, j)),
                    noise=cfg.noise, shape=ds.shape)
        m, v = predict(model, xb[test])
        return loc + scale * m, scale * scale * v

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(one, range(n_coef)))
    else:
        parts = [one(j) for j in range(n_coef)]
    cm = np.stack([p[0] for p in parts], axis=1)
    cv = np.stack([p[1] for p in parts], axis=1)
    pred = reconstruct(cm, cv, basis)
    truth = ds.outputs[test]
    report = evaluate(truth, pred.mean, pred.variance, cfg.half_width, ds.angles, ds.full_circle)
    floor = rmse(truth, coefs[test] @ basis.basis_matrix.T)
    if report.rmse < floor - 1e-9:
        raise ArithmeticError(f"GP RMSE {report.rmse} below the basis-residual floor {floor}")
    return report, floor, test, pred


def run_experiment(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> ResultTable:
    """Benchmark every configured kernel over seeded repeated splits.

    Writes ``results.json``, ``results.txt``, ``timings.json`` and per-run
    prediction CSVs under ``cfg.output`` when it is set. A failure in one
    (kernel, repeat) cell is recorded in that row's ``errors`` and the run
    continues.
    """
    ds = dataset if dataset is not None else load_dataset(cfg.dataset)
    if cfg.max_samples is not None:
        ds = ds.subset(np.arange(min(cfg.max_samples, len(ds))))
    basis = build_basis(ds.domain, cfg.order, cfg.num_basis, ds.angles)
    coefs = fit_coefficients(ds.outputs, basis)
    out = Path(cfg.output) if cfg.output else None
    if out is not None:
        (out / "predictions").mkdir(parents=True, exist_ok=True)

    rows = []
    for spec in cfg.kernels:
        reps = cfg.repeats
        if spec.family == "M-Lin" and cfg.mlin_repeats is not None:
            reps = min(reps, cfg.mlin_repeats)
        t0 = time.perf_counter()
        per = {"rmse": [], "msll": [], "lobe_rmse": [], "lobe_msll": [], "seed": []}
        floors, errors = [], []
        for r in range(reps):
            seed = cfg.seed_for(r)
            try:
                report, floor, test, pred = _run_cell(ds, basis, coefs, spec, cfg, seed)
            except (TensorGPError, ArithmeticError, np.linalg.LinAlgError) as exc:
                log.error("%s repeat %d failed: %s", spec.label, r, exc)
                errors.append({"repeat": r, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                continue
            per["rmse"].append(report.rmse)
            per["msll"].append(report.msll)
            per["lobe_rmse"].append(report.lobe_rmse)
            per["lobe_msll"].append(report.lobe_msll)
            per["seed"].append(seed)
            floors.append(floor)
            if out is not None:
                _dump_predictions(out / "predictions", spec.label, r, test, ds.angles, pred)
            log.info("%s repeat %d: rmse=%.4f msll=%.4f", spec.label, r, report.rmse, report.msll)

        def agg(key):
            v = per[key]
            return (float(np.mean(v)) if v else float("nan")), confidence_half_width(v)

        rm, rci = agg("rmse")
        mm, mci = agg("msll")
        lr, lrci = agg("lobe_rmse")
        lm, lmci = agg("lobe_msll")
        rows.append(ResultRow(
            kernel=spec.label, n_params=count_hyperparameters(spec, ds.shape), n_repeats=len(per["rmse"]),
            rmse=rm, rmse_ci=rci, msll=mm, msll_ci=mci, lobe_rmse=lr, lobe_rmse_ci=lrci,
            lobe_msll=lm, lobe_msll_ci=lmci,
            basis_floor_rmse=float(np.mean(floors)) if floors else float("nan"),
            seeds=per.pop("seed"), per_repeat=per, errors=errors,
            wall_time=time.perf_counter() - t0,
        ))

    table = ResultTable(ds.name, rows)
    if out is not None:
        (out / "results.json").write_text(table.to_json())
        (out / "results.txt").write_text(table.to_text())
        timings = {r.kernel: r.wall_time for r in rows}
        (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return table


def _dump_predictions(folder: Path, label: str, r: int, test, angles, pred) -> None:
    stem = folder / f"{re.sub(r'[^A-Za-z0-9_-]+', '_', label).strip('_')}_r{r}"
    hdr = "index," + ",".join(f"{a:g}" for a in angles)
    for kind, arr in (("mean", pred.mean), ("var", pred.variance)):
        np.savetxt(f"{stem}_{kind}.csv", np.column_stack([test, arr]), delimiter=",",
                   header=hdr, comments="", fmt=["%d"] + ["%.10g"] * arr.shape[1])
