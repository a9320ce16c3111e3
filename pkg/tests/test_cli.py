import os

import numpy as np
import pytest

from wepsmw._bench import cli
from wepsmw._bench.report import read_csv, read_eigenpair
from wepsmw.generic import NoConvergence
from wepsmw.resinv import EigResult, IterationRecord

GAMMA = complex(-0.52, -0.37)


def _fake_resinv(converged=True):
    def run(problem, sigma, *args, **kwargs):
        history = [
            IterationRecord(1, GAMMA + 0.01, 1e-4, 7, 1e-12, "converged"),
            IterationRecord(2, GAMMA, 1e-11 if converged else 1e-6),
        ]
        v = np.zeros(problem.size, dtype=complex)
        v[0] = 1.0
        result = EigResult(GAMMA, v, sigma, converged, history)
        if not converged:
            raise NoConvergence("ran out of iterations", result)
        return result

    return run


def test_solve_writes_results(small_config, tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(cli, "resinv", _fake_resinv())
    out = str(tmp_path / "solve")
    assert cli.main(["solve", "--config", small_config, "--out", out, "--seed", "4"]) == 0

    gamma, v, seed = read_eigenpair(os.path.join(out, "eigenpair.csv"))
    assert gamma == GAMMA
    assert v.shape == (9 * 13 + 18,)
    assert seed == 4
    rows = read_csv(os.path.join(out, "outer.csv"))
    assert [row["iteration"] for row in rows] == ["1", "2"]
    stdout = capsys.readouterr().out
    assert stdout.startswith("iteration\tgamma_re")
    assert "converged\tTrue" in stdout


def test_solve_without_convergence(small_config, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "resinv", _fake_resinv(converged=False))
    out = str(tmp_path / "solve")
    assert cli.main(["solve", "--config", small_config, "--out", out]) == cli.EXIT_NUMERICAL
    assert len(read_csv(os.path.join(out, "outer.csv"))) == 2


def test_random_start_vector_is_seeded(small_config, tmp_path, monkeypatch):
    starts = []

    def record(problem, sigma, gamma0, v0, *args, **kwargs):
        starts.append(v0)
        return _fake_resinv()(problem, sigma)

    monkeypatch.setattr(cli, "resinv", record)
    argv = ["solve", "--config", small_config, "--out", str(tmp_path), "--override"]
    cli.main(argv + ["resinv.v0=random", "--seed", "9"])
    cli.main(argv + ["resinv.v0=random", "--seed", "9"])
    cli.main(argv + ["resinv.v0=default"])
    assert np.array_equal(starts[0], starts[1])
    assert np.linalg.norm(starts[0]) == pytest.approx(1.0)
    assert starts[2] is None


def test_precond_bench(small_config, tmp_path, capsys):
    out = str(tmp_path / "bench")
    argv = ["precond-bench", "--config", small_config, "--out", out]
    argv += ["--override", "solver.restart=120", "--override", "solver.maxit=400"]
    assert cli.main(argv) == 0
    rows = read_csv(os.path.join(out, "precond.csv"))
    layouts = {(row["N_z"], row["N_x"], row["layout"]) for row in rows}
    assert layouts == {
        ("1", "5", "refined"),
        ("1", "1", "uniform"),
        ("3", "7", "refined"),
        ("3", "3", "uniform"),
    }
    first = [row for row in rows if row["iteration"] == "0"]
    assert len(first) == 4
    assert all(float(row["error"]) == 1.0 for row in first)
    for layout in layouts:
        curve = [row for row in rows if (row["N_z"], row["N_x"], row["layout"]) == layout]
        assert float(curve[-1]["residual"]) <= 1e-8
        assert float(curve[-1]["error"]) < 1e-3
    assert len(capsys.readouterr().out.splitlines()) == 5


def test_scaling_without_sizes(small_config, tmp_path):
    out = str(tmp_path / "scaling")
    assert cli.main(["scaling", "--config", small_config, "--out", out]) == 0
    assert read_csv(os.path.join(out, "scaling.csv")) == []


def test_scaling_skips_large_runs(small_config, tmp_path):
    out = str(tmp_path / "scaling")
    argv = ["scaling", "--config", small_config, "--out", out]
    argv += ["--override", "scaling.sizes=101", "--override", "scaling.max_unknowns=1000"]
    assert cli.main(argv) == 0
    rows = read_csv(os.path.join(out, "scaling.csv"))
    assert len(rows) == 2
    assert all(row["status"] == "skipped" for row in rows)
    assert "unknowns" in rows[0]["note"]


def test_scaling_runs(small_config, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "resinv", _fake_resinv())
    out = str(tmp_path / "scaling")
    argv = ["scaling", "--config", small_config, "--out", out]
    argv += ["--override", "scaling.sizes=9, 11", "--override", "scaling.n_z_list=3"]
    assert cli.main(argv) == 0
    rows = read_csv(os.path.join(out, "scaling.csv"))
    assert [row["n_z"] for row in rows] == ["9", "11"]
    assert [row["n_x"] for row in rows] == ["14", "15"]
    assert [row["N_x"] for row in rows] == ["7", "7"]
    assert all(row["status"] == "converged" for row in rows)
    assert all(0.0 <= float(row["precompute_fraction"]) <= 1.0 for row in rows)
    assert rows[0]["inner_iterations"] == "7"


def test_cache_build_and_inspect(small_config, tmp_path, capsys):
    path = str(tmp_path / "coupling.bin")
    assert cli.main(["cache", "--config", small_config, "build", path]) == 0
    assert os.path.exists(path)
    lines = capsys.readouterr().out.splitlines()
    assert "N\t21" in lines
    assert lines[-1] == "config\tmatches"

    other = ["--override", "resinv.sigma=-0.6-0.4i"]
    assert cli.main(["cache", "--config", small_config, "inspect", path] + other) == 0
    assert "sigma_real" in capsys.readouterr().out.splitlines()[-1]


def test_solve_reuses_cache(small_config, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "resinv", _fake_resinv())
    path = str(tmp_path / "coupling.bin")
    argv = ["solve", "--config", small_config, "--out", str(tmp_path)]
    argv += ["--override", f"cache.path={path}"]
    assert cli.main(argv) == 0
    assert os.path.exists(path)
    modified = os.path.getmtime(path)
    assert cli.main(argv) == 0
    assert os.path.getmtime(path) == modified

    stale = argv + ["--override", "preconditioner.kbar=10"]
    assert cli.main(stale) == cli.EXIT_CONFIG


def test_solve_rerun_is_bit_identical(small_config, tmp_path):
    path = str(tmp_path / "coupling.bin")
    contents, statuses = [], []
    for run in ("first", "second"):
        out = str(tmp_path / run)
        argv = ["solve", "--config", small_config, "--out", out]
        argv += ["--override", f"cache.path={path}", "--workers", "1"]
        statuses.append(cli.main(argv))
        with open(os.path.join(out, "eigenpair.csv"), "rb") as f:
            contents.append(f.read())
    assert statuses[0] == statuses[1]
    assert statuses[0] in (cli.EXIT_OK, cli.EXIT_NUMERICAL)
    assert contents[0] == contents[1]


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--override", "discretization.n_z=10"],
        ["cache", "inspect", "/nonexistent/coupling.bin"],
        ["cache", "inspect"],
    ],
)
def test_configuration_errors(small_config, argv, capsys):
    command, rest = argv[0], argv[1:]
    assert cli.main([command, "--config", small_config] + rest) == cli.EXIT_CONFIG
    assert capsys.readouterr().err.startswith(f"{command}: ")


def test_missing_config_file(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_CONFIG


def test_usage_errors():
    with pytest.raises(SystemExit):
        cli.main(["solve"])
    with pytest.raises(SystemExit):
        cli.main(["frobnicate", "--config", "x.ini"])
