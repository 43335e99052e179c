import subprocess
import sys

import numpy as np
import pytest

from conftest import FIXTURES
from grassmann_hf.cli import RunConfig, main, make_guess, run
from grassmann_hf.errors import ShapeError, UsageError
from grassmann_hf.hf import energy
from grassmann_hf.manifold import feasibility_residual

DESK = str(FIXTURES / "desk4.gfi")


def read_report(path):
    out = {}
    for line in path.read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


def test_config_defaults_and_validation():
    assert RunConfig("rgd").effective_step == 0.02 and RunConfig("rgd").effective_max_iter == 1000
    assert RunConfig("rcg-fr").effective_step == 0.01 and RunConfig("rcg-fr").effective_max_iter == 300
    assert RunConfig("rcg-pr").effective_step == 0.07
    assert RunConfig("rnr").effective_max_iter == 50 and RunConfig("nrlm").effective_max_iter == 50
    assert RunConfig("scf").effective_max_iter == 100
    c = RunConfig()
    assert (c.tol_grad, c.tol_val, c.switch_grad_tol, c.diis_window) == (1e-8, 1e-10, 1e-3, 2)
    for bad in (dict(algorithm="bfgs"), dict(step_size=0.0), dict(max_iter=0), dict(tol_grad=-1.0),
                dict(switch_grad_tol=1e-9), dict(diis_window=-1), dict(guess="atomic")):
        with pytest.raises(UsageError):
            RunConfig(**bad)


def test_guesses(desk, tmp_path):
    core = make_guess(desk, "core")
    r1, r2 = make_guess(desk, "random", 3), make_guess(desk, "random", 3)
    assert np.array_equal(r1.C_alpha, r2.C_alpha) and not np.array_equal(r1.C_alpha, r1.C_beta)
    for pair in (core, r1):
        for C in pair:
            assert feasibility_residual(desk.metric, C) < 1e-10
    path = tmp_path / "g.npz"
    np.savez(path, C_alpha=1.0001 * core.C_alpha, C_beta=core.C_beta)
    loaded = make_guess(desk, f"file:{path}")
    assert feasibility_residual(desk.metric, loaded.C_alpha) < 1e-12
    np.savez(path, C_alpha=core.C_alpha[:, :1], C_beta=core.C_beta)
    with pytest.raises(ShapeError):
        make_guess(desk, f"file:{path}")
    np.savez(path, alpha=core.C_alpha)
    with pytest.raises(UsageError):
        make_guess(desk, f"file:{path}")


def test_core_guess_beats_random_guess(desk):
    E_core = energy(make_guess(desk, "core"), desk)
    wins = sum(E_core <= energy(make_guess(desk, "random", s), desk) for s in range(20))
    assert wins >= 18


def test_non_interacting_core_guess_converges_immediately(desk):
    from grassmann_hf.hf import IntegralSet
    free = IntegralSet(desk.S, desk.h, np.zeros_like(desk.g), desk.e_nuc, 2, 2)
    for alg in ("rgd", "rnr", "rcg-fr", "rcg-pr", "nrlm", "scf", "hybrid"):
        report, _, _ = run(RunConfig(alg), free)
        assert report.status in ("ConvergedGrad", "ConvergedVal") and report.iterations <= 2, alg


@pytest.mark.parametrize("alg", ["rgd", "rnr", "rcg-fr", "rcg-pr", "nrlm", "scf", "hybrid"])
def test_every_algorithm_on_desk(alg, desk, tmp_path):
    cfg = RunConfig(alg, trace_path=str(tmp_path / "t.csv"), report_path=str(tmp_path / "r.txt"),
                    orbitals_path=str(tmp_path / "o.npz"))
    report, pair, trace = run(cfg, desk)
    assert report.exit_code == 0
    assert report.final_energy == pytest.approx(-4.420786981186, abs=2e-8)
    assert abs(report.final_energy - energy(pair, desk)) < 1e-12
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "iter,energy,grad_norm,step_norm,phase" and len(rows) == len(trace.records) + 1
    rep = read_report(tmp_path / "r.txt")
    assert rep["status"] == report.status and float(rep["final_energy"]) == report.final_energy
    saved = np.load(tmp_path / "o.npz")
    assert np.array_equal(saved["C_alpha"], pair.C_alpha)


def test_hybrid_report_on_desk(desk):
    report, _, trace = run(RunConfig("hybrid"), desk)
    assert report.status == "ConvergedGrad" and report.final_grad_norm < 1e-10
    assert report.switch_iteration == trace.switch_iteration and report.switch_iteration > 0
    assert "switch_iteration = " in report.to_text()


def test_rnr_on_converged_input(desk, tmp_path):
    report, pair, _ = run(RunConfig("hybrid", orbitals_path=str(tmp_path / "o.npz")), desk)
    again, _, _ = run(RunConfig("rnr", guess=f"file:{tmp_path / 'o.npz'}"), desk)
    assert again.iterations <= 1 and abs(again.final_energy - report.final_energy) < 1e-10


def test_exit_codes(tmp_path, capsys):
    assert main([DESK, "--algorithm", "rnr"]) == 0
    assert "status = ConvergedGrad" in capsys.readouterr().out
    assert main([DESK, "--algorithm", "rgd", "--max-iter", "3"]) == 2
    bad = tmp_path / "bad.gfi"
    bad.write_text("GFI 1\nd 1 na 1 nb 1 enuc 0\nS 1 1 -1\n")
    assert main([str(bad)]) == 1
    assert "positive definite" in capsys.readouterr().err
    assert main([str(tmp_path / "missing.gfi")]) == 1
    assert main([]) == 1
    with pytest.raises(SystemExit) as info:
        main([DESK, "--algorithm", "bfgs"])
    assert info.value.code == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("alg", ["rgd", "rnr", "rcg-fr", "rcg-pr", "nrlm", "scf", "hybrid"])
def test_overflow_is_numerical_failure(alg, tmp_path, capsys):
    path = tmp_path / "huge.gfi"
    path.write_text("GFI 1\nd 2 na 1 nb 1 enuc 0\nS 1 1 1\nS 2 2 1\n"
                    "H 1 1 1e308\nH 2 2 1e308\nH 1 2 1e308\n")
    assert main([str(path), "--algorithm", alg]) == 3
    assert "status = NumericalFailure" in capsys.readouterr().out


def test_batch_mode(tmp_path, capsys):
    for name in ("a", "b"):
        (tmp_path / f"{name}.gfi").write_text((FIXTURES / "desk4.gfi").read_text())
    (tmp_path / "c.gfi").write_text((FIXTURES / "h2_sto3g.gfi").read_text())
    code = main(["--batch", str(tmp_path), "--algorithm", "hybrid", "--workers", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.count("ConvergedGrad") == 3
    assert (tmp_path / "a.trace.csv").read_bytes() == (tmp_path / "b.trace.csv").read_bytes()
    assert (tmp_path / "c.report.txt").exists()
    assert main(["--batch", str(tmp_path), DESK]) == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["--batch", str(empty)]) == 1


def test_console_entry_point(tmp_path):
    trace = tmp_path / "t.csv"
    res = subprocess.run([sys.executable, "-m", "grassmann_hf", DESK, "--algorithm", "scf", "--trace", str(trace)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "algorithm = scf" in res.stdout and trace.exists()
