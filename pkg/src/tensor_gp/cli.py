"""Command-line entry point ``tensor-gp``.

Exit codes: 0 success, 1 configuration error, 2 data error,
3 numerical or conditioning error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConditioningError,
    ConfigError,
    DimensionError,
    InitializationError,
    LoadError,
    ParameterError,
)
from .harness.data import from_matrices, load_dataset, save_dataset, synth_generate
from .harness.experiment import ExperimentConfig, ResultTable, paired_comparison, run_experiment
from .kernels import KernelSpec
from .metric import MetricParams, build_metric, write_metric_csv
from .tensor import GridShape

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _gamma(text: str) -> MetricParams:
    parts = [float(s) for s in text.split(",")]
    return MetricParams(parts[0] if len(parts) == 1 else tuple(parts))


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.output:
        cfg.output = args.output
    if cfg.dataset is None:
        raise ConfigError("config has no dataset path")
    if not Path(cfg.dataset).is_absolute():
        cfg.dataset = str((Path(args.config).parent / cfg.dataset).resolve())
    table = run_experiment(cfg)
    sys.stdout.write(table.to_text())
    return EXIT_OK


def _cmd_synth(args) -> int:
    shape = GridShape.parse(args.shape)
    spec = KernelSpec(args.kernel, patch_shape=tuple(int(s) for s in args.patch.split("x")) if args.patch else None,
                      metric_params=_gamma(args.gamma) if args.gamma else None)
    ds = synth_generate(shape, spec, None, args.n, args.seed, num_basis=args.num_basis, order=args.order,
                        domain=(0.0, args.domain), output_map=args.output_map)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples ({shape}) to {args.out}")
    return EXIT_OK


def _cmd_inspect_g(args) -> int:
    shape = GridShape.parse(args.shape)
    g = build_metric(shape, _gamma(args.gamma))
    write_metric_csv(g, args.out)
    ev = g.eigenvalues()
    print(f"G: {g.n}x{g.n}, eigenvalues in [{ev[0]:.3e}, {ev[-1]:.3e}] -> {args.out}")
    return EXIT_OK


def _pick(path: str, kernel: str | None):
    try:
        table = ResultTable.from_dict(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise LoadError(f"cannot read results {path}: {exc}") from None
    if kernel is None:
        if len(table.rows) != 1:
            raise ConfigError(f"{path} holds {len(table.rows)} kernels; choose one with --kernel-a/--kernel-b")
        return table.rows[0]
    try:
        return table.row(kernel)
    except KeyError:
        raise ConfigError(f"{path} has no kernel {kernel!r}") from None


def _cmd_compare(args) -> int:
    ra, rb = _pick(args.a, args.kernel_a), _pick(args.b, args.kernel_b)
    if ra.seeds != rb.seeds:
        raise ConfigError("results are not paired: split seeds differ")
    out = {"a": ra.kernel, "b": rb.kernel}
    for metric in ("rmse", "msll"):
        res = paired_comparison(ra.per_repeat[metric], rb.per_repeat[metric])
        out[metric] = {"t": res.t, "p_value": res.p_value, "n": res.n, "degenerate": res.degenerate}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_convert(args) -> int:
    shape = GridShape.parse(args.shape)
    x = np.loadtxt(args.inputs, delimiter=",", skiprows=args.skip_header)
    y = np.loadtxt(args.outputs, delimiter=",", skiprows=args.skip_header)
    angles = np.arange(args.angle_start, args.angle_start + y.shape[1]) if args.angle_start is not None else None
    ds = from_matrices(args.name, shape, x, y, angles, input_order=args.input_order)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tensor-gp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a benchmark experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="override the config's output directory")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="generate a synthetic dataset from a known GP")
    s.add_argument("--shape", required=True, help="VxHxWxP")
    s.add_argument("--kernel", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--gamma", help="metric lengthscale (or gi,gj,gk) for IMED variants")
    s.add_argument("--patch", help="WConv patch, e.g. 3x3x1")
    s.add_argument("--num-basis", type=int, default=21)
    s.add_argument("--order", type=int, default=4)
    s.add_argument("--domain", type=float, default=180.0, help="upper angle in degrees")
    s.add_argument("--output-map", choices=("identity", "exp"), default="identity")
    s.set_defaults(func=_cmd_synth)

    g = sub.add_parser("inspect-g", help="dump the voxel-proximity matrix as CSV")
    g.add_argument("--shape", required=True)
    g.add_argument("--gamma", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_inspect_g)

    c = sub.add_parser("compare", help="one-sided paired t-test between two result files")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--kernel-a")
    c.add_argument("--kernel-b")
    c.set_defaults(func=_cmd_compare)

    v = sub.add_parser("convert", help="convert plain CSV matrices to a dataset directory")
    v.add_argument("--inputs", required=True)
    v.add_argument("--outputs", required=True)
    v.add_argument("--shape", required=True)
    v.add_argument("--name", default="dataset")
    v.add_argument("--out", required=True)
    v.add_argument("--input-order", choices=("canonical", "vhwp"), default="canonical")
    v.add_argument("--angle-start", type=float)
    v.add_argument("--skip-header", type=int, default=0)
    v.set_defaults(func=_cmd_convert)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoadError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConditioningError, InitializationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
