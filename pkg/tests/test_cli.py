import csv
import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from dysolve.cli import cli
from dysolve.dyson import load_cache, load_matrix


@pytest.fixture(autouse=True)
def cache_folder(tmp_path, monkeypatch):
    folder = tmp_path / "cache"
    monkeypatch.setenv("DYSOLVE_CACHE_DIR", str(folder))
    return folder


@pytest.fixture
def runner():
    return CliRunner()


def _config(tmp_path, name, document):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def _rows(path):
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "#schema=1"
    return list(csv.DictReader(lines[1:]))


def test_prepare_default_problem(runner, tmp_path, cache_folder):
    result = runner.invoke(cli, ["--subpixels", "5", "prepare"])
    assert result.exit_code == 0, result.output
    assert "R=31" in result.output
    assert "crc32" in result.output
    [name] = os.listdir(cache_folder)
    cache = load_cache(str(cache_folder / name))
    assert cache.truncation_order == 4
    assert cache.subpixel_width == pytest.approx(0.2)


def test_prepare_rejects_order(runner):
    result = runner.invoke(cli, ["--order", "5", "prepare"])
    assert result.exit_code == 2
    assert "UnsupportedOrder" in result.output


def test_propagate_writes_matrix(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["--subpixels", "5", "--order", "3", "--out", str(out), "propagate"])
    assert result.exit_code == 0, result.output
    u = load_matrix(str(out / "propagator.dysu"))
    assert u.shape == (2, 2)
    assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-6)
    meta = json.loads((out / "propagator.meta.json").read_text())
    assert meta["order"] == 3
    assert meta["subpixels"] == 50
    # second run reuses the cache file
    again = runner.invoke(cli, ["--subpixels", "5", "--order", "3", "--out", str(out), "propagate"])
    assert again.exit_code == 0
    assert np.array_equal(load_matrix(str(out / "propagator.dysu")), u)


def test_model_then_propagate_with_reference(runner, tmp_path):
    system = _config(
        tmp_path,
        "bench.json",
        {"kind": "benchmark", "dimension": 4, "duration": 4.0, "subpixels_per_pixel": 8},
    )
    out = tmp_path / "model"
    result = runner.invoke(
        cli, ["--config", _config(tmp_path, "job.json", {"system": system}), "--out", str(out), "model"]
    )
    assert result.exit_code == 0, result.output
    assert "fingerprint" in result.output
    assert (out / "system.json").exists() and (out / "pulse.json").exists()

    job = _config(
        tmp_path,
        "propagate.json",
        {
            "system": str(out / "system.json"),
            "pulse": str(out / "pulse.json"),
            "reference": True,
            "output_dir": str(out),
        },
    )
    result = runner.invoke(cli, ["--config", job, "propagate"])
    assert result.exit_code == 0, result.output
    distance = float(result.output.split("distance to reference:")[1].split()[0])
    assert distance < 1e-5


def test_gradcheck_passes(runner):
    result = runner.invoke(cli, ["--subpixels", "5", "gradcheck"])
    assert result.exit_code == 0, result.output
    error = float(result.output.split("max relative error:")[1].split()[0])
    assert error < 1e-5


def test_gradcheck_mismatched_filter_fails(runner, tmp_path):
    job = _config(tmp_path, "job.json", {"gradcheck": {"mismatched_filter": True}})
    result = runner.invoke(cli, ["--config", job, "--subpixels", "5", "gradcheck"])
    assert result.exit_code == 4


def test_optimize_writes_outputs(runner, tmp_path):
    settings = _config(
        tmp_path,
        "optimization.json",
        {"epsilon": 1.0, "max_iters": 50, "tolerances": {"infidelity": 1e-6}},
    )
    out = tmp_path / "opt"
    job = _config(tmp_path, "job.json", {"optimization": settings, "output_dir": str(out)})
    result = runner.invoke(cli, ["--config", job, "--subpixels", "5", "optimize"])
    assert result.exit_code == 0, result.output
    rows = _rows(out / "trace.csv")
    assert rows[0]["iteration"] == "0"
    assert float(rows[-1]["fidelity"]) > 1 - 1e-6
    assert json.loads((out / "trace.meta.json").read_text())["reason"] == "infidelity_tolerance"
    pulses = json.loads((out / "pulse_optimized.json").read_text())
    assert len(pulses["channels"][0]["real_mhz"]) == 10


def test_warm_start_resumes_at_fixed_point(runner, tmp_path):
    first_out = tmp_path / "first"
    settings = _config(tmp_path, "first.json", {"epsilon": 1.0, "max_iters": 5})
    job = _config(tmp_path, "job.json", {"optimization": settings, "output_dir": str(first_out)})
    result = runner.invoke(cli, ["--config", job, "--subpixels", "5", "optimize"])
    assert result.exit_code == 0, result.output
    reached = float(_rows(first_out / "trace.csv")[-1]["fidelity"])

    second_out = tmp_path / "second"
    settings = _config(tmp_path, "second.json", {"epsilon": 1.0, "max_iters": 0})
    job = _config(
        tmp_path,
        "resume.json",
        {
            "optimization": settings,
            "warm_start": str(first_out / "pulse_optimized.json"),
            "output_dir": str(second_out),
        },
    )
    result = runner.invoke(cli, ["--config", job, "--subpixels", "5", "optimize"])
    assert result.exit_code == 0, result.output
    rows = _rows(second_out / "trace.csv")
    assert len(rows) == 1
    assert abs(float(rows[0]["fidelity"]) - reached) < 1e-9


def test_flat_optimize(runner, tmp_path):
    settings = _config(tmp_path, "optimization.json", {"mode": "flat"})
    out = tmp_path / "flat"
    job = _config(tmp_path, "job.json", {"optimization": settings, "output_dir": str(out)})
    result = runner.invoke(cli, ["--config", job, "--subpixels", "5", "optimize"])
    assert result.exit_code == 0, result.output
    assert "flat pulse fidelity" in result.output
    real = json.loads((out / "pulse_optimized.json").read_text())["channels"][0]["real_mhz"]
    assert len(set(real)) == 1


def test_benchmark_table(runner, tmp_path):
    job = _config(
        tmp_path,
        "job.json",
        {
            "output_dir": str(tmp_path / "bench"),
            "benchmark": {"orders": [0, 2], "subpixels": [4], "duration": 3.0, "dimension": 4},
        },
    )
    result = runner.invoke(cli, ["--config", job, "benchmark"])
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "bench" / "benchmark.csv")
    assert [row["order"] for row in rows] == ["0", "2"]
    assert [row["entries"] for row in rows] == ["1", "7"]
    assert rows[0]["total_subpixels"] == "12"
    assert float(rows[1]["error"]) < float(rows[0]["error"])
    meta = json.loads((tmp_path / "bench" / "benchmark.meta.json").read_text())
    assert meta["entries"] == {"1": {"0": 1, "2": 7}}


def test_missing_config(runner, tmp_path):
    result = runner.invoke(cli, ["--config", str(tmp_path / "nope.json"), "prepare"])
    assert result.exit_code == 2
