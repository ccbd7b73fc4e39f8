import json
import subprocess
import sys

import numpy as np
import pytest

from tensor_gp.cli import main
from tensor_gp.harness import load_dataset


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", "--shape", "3x2x1x1", "--kernel", "IMED", "--gamma", "1", "--n", "20",
                 "--seed", "3", "--out", str(out), "--num-basis", "6"]) == 0
    return out


def test_synth_writes_loadable_dataset(synth_dir):
    ds = load_dataset(synth_dir)
    assert len(ds) == 20 and str(ds.shape) == "3x2x1x1"
    assert ds.meta["truth"]["kernel"]["family"] == "IMED"


def test_inspect_g(tmp_path, capsys):
    out = tmp_path / "g.csv"
    assert main(["inspect-g", "--shape", "3x3x1x1", "--gamma", "1", "--out", str(out)]) == 0
    g = np.loadtxt(out, delimiter=",")
    assert g.shape == (9, 9) and np.allclose(g, g.T)
    assert "eigenvalues" in capsys.readouterr().out


def test_inspect_g_numerical_error_exit_code(tmp_path):
    assert main(["inspect-g", "--shape", "6x6x3x1", "--gamma", "50", "--out", str(tmp_path / "g.csv")]) == 3


def _config(tmp_path, synth_dir, **extra):
    cfg = {"dataset": str(synth_dir), "kernels": ["RBF", "IMED"], "num_basis": 6, "repeats": 2,
           "optimizer": {"restarts": 1}, "output": str(tmp_path / "out")}
    cfg.update(extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def test_run_and_compare(tmp_path, synth_dir, capsys):
    cfg = _config(tmp_path, synth_dir)
    assert main(["run", "--config", str(cfg)]) == 0
    assert "RBF" in capsys.readouterr().out
    res = tmp_path / "out" / "results.json"
    assert main(["compare", "--a", str(res), "--b", str(res), "--kernel-a", "IMED", "--kernel-b", "RBF"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["rmse"]["n"] == 2 and 0 <= doc["rmse"]["p_value"] <= 1


def test_compare_needs_kernel_choice(tmp_path, synth_dir):
    assert main(["run", "--config", str(_config(tmp_path, synth_dir))]) == 0
    res = str(tmp_path / "out" / "results.json")
    assert main(["compare", "--a", res, "--b", res]) == 1
    assert main(["compare", "--a", res, "--b", str(tmp_path / "missing.json"), "--kernel-a", "RBF"]) == 2


def test_config_error_exit_code(tmp_path, synth_dir):
    assert main(["run", "--config", str(_config(tmp_path, synth_dir, bogus=1))]) == 1
    assert main(["run", "--config", str(tmp_path / "absent.json")]) == 1


def test_data_error_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dataset": str(tmp_path / "nope"), "kernels": ["RBF"]}))
    assert main(["run", "--config", str(cfg)]) == 2


def test_relative_dataset_path(tmp_path, synth_dir):
    cfg = _config(tmp_path, synth_dir, dataset="ds", repeats=1, kernels=["RBF"])
    assert main(["run", "--config", str(cfg)]) == 0


def test_convert(tmp_path):
    x = np.random.default_rng(0).uniform(1.1, 2.3, size=(3, 4))
    y = np.random.default_rng(1).uniform(size=(3, 5))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    np.savetxt(tmp_path / "y.csv", y, delimiter=",")
    assert main(["convert", "--inputs", str(tmp_path / "x.csv"), "--outputs", str(tmp_path / "y.csv"),
                 "--shape", "2x2x1x1", "--out", str(tmp_path / "conv"), "--angle-start", "0"]) == 0
    ds = load_dataset(tmp_path / "conv")
    assert np.allclose(ds.inputs, x) and np.array_equal(ds.angles, np.arange(5.0))


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tensor_gp.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "inspect-g" in proc.stdout
