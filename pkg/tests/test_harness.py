import math
import subprocess
import sys

import numpy as np
import pytest

from ppic2d import cli
from ppic2d.fields import Grid, UniformVelocity, VortexVelocity
from ppic2d.harness import (CSV_HEADER, ConfigError, ConvergenceRow, ExperimentConfig,
                            ExperimentResult, check_slopes, fit_order, reference_step,
                            rows_from_csv, rows_to_csv, run_experiment, simulate_vortex)
from ppic2d.reconstruct import Method


def rows_with(errors, column="symm_diff", ns=(16, 32, 64, 128)):
    rows = []
    for n, e in zip(ns, errors):
        vals = dict(symm_diff=1.0, frac_linf=1.0, m1_linf=1.0, kappa_linf=1.0)
        vals[column] = e
        rows.append(ConvergenceRow(n, 1.0 / n, wall_time_s=0.0, cost_evals_mean=0.0, **vals))
    return rows


class TestFitOrder:
    def test_exact_square(self):
        ns = (16, 32, 64, 128)
        rows = rows_with([3.0 / n ** 2 for n in ns])
        assert fit_order(rows)["symm_diff"] == pytest.approx(2.0, abs=1e-12)

    def test_noisy_cube(self):
        rng = np.random.default_rng(7)
        ns = (16, 32, 64, 128, 256)
        errs = [0.5 / n ** 3 * (1 + rng.uniform(-0.05, 0.05)) for n in ns]
        assert fit_order(rows_with(errs, ns=ns))["symm_diff"] == pytest.approx(3.0, abs=0.1)

    def test_constant(self):
        assert fit_order(rows_with([0.2] * 4))["frac_linf"] == pytest.approx(0.0, abs=1e-12)

    def test_floor_rows_dropped(self):
        ns = (16, 32, 64, 128)
        # last row sits at round-off for a moment error of size h^3
        errs = [1.0 / 16 ** 8, 1.0 / 32 ** 8, 1.0 / 64 ** 8, 1e-30]
        slope = fit_order(rows_with(errs, "m1_linf", ns))["m1_linf"]
        assert slope == pytest.approx(8.0, abs=1e-9)

    def test_all_floored_is_undefined(self):
        assert fit_order(rows_with([1e-300] * 4))["symm_diff"] is None

    def test_nan_column_is_undefined(self):
        assert fit_order(rows_with([math.nan] * 4, "kappa_linf"))["kappa_linf"] is None

    def test_needs_three_rows(self):
        with pytest.raises(ValueError):
            fit_order(rows_with([1.0, 0.5], ns=(16, 32)))


class TestRows:
    def test_negative_error_rejected(self):
        with pytest.raises(ValueError):
            ConvergenceRow(8, 0.125, -1e-3, 0.0, 0.0, 0.0, 0.0, 0.0)

    def test_csv_header_and_round_trip(self):
        rows = [ConvergenceRow(32, 1 / 32, 1.234e-5, 0.1 / 3, 7e-300, math.nan, 0.5, 6.25),
                ConvergenceRow(64, 1 / 64, 3.0e-6, 0.01, 1e-12, 2.0, 1.5, 5.0)]
        text = rows_to_csv(rows)
        assert text.splitlines()[0] == "N,h,symm_diff,frac_linf,m1_linf,kappa_linf,wall_time_s,cost_evals_mean"
        assert tuple(text.splitlines()[0].split(",")) == CSV_HEADER
        back = rows_from_csv(text)
        for a, b in zip(rows, back):
            for x, y in zip(a.as_tuple(), b.as_tuple()):
                assert (math.isnan(x) and math.isnan(y)) or x == y
        assert rows_to_csv(back) == text

    def test_bad_header(self):
        with pytest.raises(ValueError):
            rows_from_csv("N,h\n1,2\n")


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(experiment="nope"),
        dict(experiment="vortex-reverse", method="YOUNGS"),
        dict(experiment="vortex-reverse", resolutions=(64, 32)),
        dict(experiment="vortex-reverse", resolutions=(2,)),
        dict(experiment="vortex-reverse", courant=1.5),
        dict(experiment="vortex-reverse", courant=0.0),
        dict(experiment="vortex-reverse", period=-1.0),
        dict(experiment="vortex-reverse", velocity="spectral"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)

    def test_method_parsed(self):
        cfg = ExperimentConfig("recon-convergence", method="pmof")
        assert cfg.method == Method.PMOF


class TestTimeStepping:
    def test_reference_step_vortex(self):
        g = Grid.square(32, periodic=True)
        assert reference_step(g, VortexVelocity(), 1.0, 1.0) == pytest.approx(1 / 32, rel=1e-12)

    def test_reference_step_uniform(self):
        g = Grid.square(32)
        assert reference_step(g, UniformVelocity(2.0), 1.0, 0.5) == pytest.approx(0.25 / 32, rel=1e-12)

    def test_lands_on_period(self):
        cfg = ExperimentConfig("vortex-reverse", "ELVIRA", (16,), period=0.37)
        grid, _, state, _ = simulate_vortex(cfg, 16)
        assert state.t == 0.37


class TestExperiments:
    def test_curvature_static_small(self):
        cfg = ExperimentConfig("curvature-static", "PLVIRA", (8, 16), timing=False)
        res = run_experiment(cfg)
        assert [r.N for r in res.rows] == [8, 16]
        assert res.rows[1].kappa_linf < res.rows[0].kappa_linf
        assert res.rows[0].h == pytest.approx(1 / 32)

    def test_recon_convergence_small(self):
        cfg = ExperimentConfig("recon-convergence", "PMOF", (16, 32, 64), timing=False)
        res = run_experiment(cfg)
        assert all(math.isnan(r.kappa_linf) for r in res.rows)
        assert res.rows[-1].symm_diff < res.rows[0].symm_diff
        assert all(r.cost_evals_mean > 0 for r in res.rows)

    def test_vortex_deterministic(self):
        cfg = ExperimentConfig("vortex-reverse", "PLVIRA", (16,), timing=False)
        a = run_experiment(cfg).to_csv()
        b = run_experiment(cfg).to_csv()
        assert a == b

    def test_staggered_velocity(self):
        cfg = ExperimentConfig("vortex-reverse", "ELVIRA", (16,), velocity="staggered", timing=False)
        res = run_experiment(cfg)
        analytic = run_experiment(ExperimentConfig("vortex-reverse", "ELVIRA", (16,), timing=False))
        assert res.rows[0].frac_linf == pytest.approx(analytic.rows[0].frac_linf, rel=0.5)

    def test_check_bands(self):
        rows = rows_with([1.0 / n for n in (32, 64, 128)], "frac_linf", (32, 64, 128))
        res = ExperimentResult(ExperimentConfig("vortex-reverse", "PLVIRA", (32, 64, 128)), rows)
        assert any("frac_linf" in m for m in check_slopes(res))
        rows = rows_with([1.0 / n ** 2 for n in (32, 64, 128)], "frac_linf", (32, 64, 128))
        for r, n in zip(rows, (32, 64, 128)):
            r.kappa_linf = 1.0 / n ** 2
        res = ExperimentResult(ExperimentConfig("vortex-reverse", "PLVIRA", (32, 64, 128)), rows)
        assert check_slopes(res) == []


class TestCLI:
    def test_config_error_exit(self, capsys):
        assert cli.main(["vortex-reverse", "--courant", "2"]) == 2
        assert "courant" in capsys.readouterr().err

    def test_unknown_method_exit(self):
        assert cli.main(["vortex-reverse", "--method", "SLIC"]) == 2

    def test_parse_error_exit(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["no-such-experiment"])
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            cli.main(["vortex-reverse", "--resolutions", "32,x"])
        assert exc.value.code == 2

    def test_numerical_failure_exit(self, monkeypatch):
        from ppic2d import harness

        def boom(cfg):
            raise harness.NumericalFailure("bracket lost")

        monkeypatch.setitem(harness.RUNNERS, "geometry-selftest", boom)
        assert cli.main(["geometry-selftest", "--resolutions", "8"]) == 3

    def test_cfl_violation_is_numerical_failure(self, monkeypatch):
        from ppic2d import advect, harness

        def fold(*args, **kwargs):
            raise advect.CFLViolation("folded")

        monkeypatch.setattr(harness, "advance", fold)
        assert cli.main(["vortex-reverse", "--resolutions", "8"]) == 3

    def test_writes_csv(self, tmp_path):
        out = tmp_path / "static.csv"
        rc = cli.main(["curvature-static", "--resolutions", "8,16,32", "--out", str(out), "--no-timing"])
        assert rc == 0
        rows = rows_from_csv(out.read_text())
        assert [r.N for r in rows] == [8, 16, 32]

    def test_check_exit(self, tmp_path, monkeypatch):
        from ppic2d import harness

        def first_order(cfg):
            ns = cfg.resolutions
            return ExperimentResult(cfg, rows_with([1.0 / n for n in ns], "frac_linf", ns))

        monkeypatch.setitem(harness.RUNNERS, "vortex-reverse", first_order)
        args = ["vortex-reverse", "--method", "PLVIRA", "--resolutions", "32,64,128",
                "--out", str(tmp_path / "x.csv")]
        assert cli.main(args) == 0
        assert cli.main(args + ["--check"]) == 4

    def test_console_script_module(self, tmp_path):
        out = tmp_path / "s.csv"
        proc = subprocess.run([sys.executable, "-m", "ppic2d.cli", "geometry-selftest", "--method", "ELVIRA",
                               "--resolutions", "8", "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.read_text().startswith("N,h,")
