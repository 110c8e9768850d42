"""Command-line behavior: exit codes, precedence, artifacts on disk."""

import json

import numpy as np
import pytest

from qkr import cli, ensemble, evolve, scaling, storage
from qkr.cli import main
from qkr.storage import fmt


def synth_csv(
    path,
    sizes=(64, 128, 256),
    n_u=21,
    noise=0.002,
    seed=1,
    window=(2.10, 2.16),
    u_c=2.13,
    nu=2.6,
    coeffs=(0.325, -0.2, 0.05),
    size_blind=False,
):
    """Curves CSV whose scaling-time rows follow an exact scaling law."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lines = [storage.CSV_HEADER]
    for n in sizes:
        for u in np.linspace(window[0], window[1], n_u):
            d = float(scaling.scaling_model(u, n, u_c, nu, coeffs))
            if size_blind:
                d = 0.3 - 0.5 * (u - u_c)
            d += rng.normal(0.0, noise)
            for t in (n * n // 8, n * n // 4):  # only the second row counts
                lines.append(
                    f"{fmt(u)},{fmt(1.0 / u)},{n},{t},{fmt(d)},{fmt(0.002)},"
                    f"{fmt(1.0)},4,{seed}"
                )
    path.write_text("\n".join(lines) + "\n")
    return path


class TestGrid:
    def test_endpoints_inclusive(self):
        grid = cli._u_grid(2.10, 2.16, 0.005)
        assert len(grid) == 13
        assert grid[0] == 2.10
        assert grid[-1] == 2.16

    def test_decimal_steps_do_not_drop_the_end(self):
        assert cli._u_grid(0.1, 0.3, 0.1) == [0.1, 0.2, 0.3]

    def test_bad_steps(self):
        with pytest.raises(cli.UsageError):
            cli._u_grid(0.1, 0.3, 0.0)
        with pytest.raises(cli.UsageError):
            cli._u_grid(0.3, 0.1, 0.1)


class TestParsing:
    def test_unknown_command_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main(["polish"])
        assert info.value.code == 2

    def test_missing_command_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_bad_init_choice_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main(["sweep", "--init", "ring"])
        assert info.value.code == 2


class TestSweepCommand:
    def run_small(self, out, extra=()):
        return main(
            [
                "sweep",
                "--u-min", "0.9",
                "--u-max", "1.0",
                "--u-step", "0.1",
                "--sizes", "8",
                "--samples", "2",
                "--seed", "3",
                "--out", str(out),
                *extra,
            ]
        )

    def test_writes_curves_and_sidecars(self, tmp_path, capsys):
        assert self.run_small(tmp_path) == 0
        assert (tmp_path / "curves.csv").exists()
        assert len(list(tmp_path.glob("curve_*.json"))) == 2
        rows = storage.read_curves_csv(tmp_path / "curves.csv")
        # the realized control parameter is 1/h_e, one ulp off the label
        # when the reciprocal does not round-trip
        assert {r["u"] for r in rows} == {1.0 / (1.0 / 0.9), 1.0}
        assert "wrote" in capsys.readouterr().out

    def test_resume_is_byte_stable(self, tmp_path, capsys):
        self.run_small(tmp_path)
        blob = (tmp_path / "curves.csv").read_bytes()
        capsys.readouterr()
        assert self.run_small(tmp_path) == 0
        assert "2 loaded" in capsys.readouterr().out
        assert (tmp_path / "curves.csv").read_bytes() == blob

    def test_worker_count_invisible_in_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self.run_small(a)
        self.run_small(b, extra=("--workers", "2"))
        assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
        for f in sorted(a.glob("curve_*.json")):
            assert f.read_bytes() == (b / f.name).read_bytes()

    def test_t_steps_override(self, tmp_path):
        assert self.run_small(tmp_path, extra=("--t-steps", "8")) == 0
        rows = storage.read_curves_csv(tmp_path / "curves.csv")
        assert max(r["t"] for r in rows) == 8

    def test_truncation_warning_on_tiny_lattice(self, tmp_path, capsys):
        rc = main(
            [
                "sweep",
                "--u-min", "2.13", "--u-max", "2.13", "--u-step", "1",
                "--sizes", "8", "--samples", "2", "--seed", "3",
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        assert "truncation flagged" in capsys.readouterr().out

    def test_missing_required_flag(self, tmp_path, capsys):
        rc = main(
            ["sweep", "--u-min", "0.9", "--u-max", "1.0", "--u-step", "0.1",
             "--out", str(tmp_path)]
        )
        assert rc == 2
        assert "--sizes" in capsys.readouterr().err

    def test_empty_sizes(self, tmp_path):
        assert self.run_small(tmp_path, extra=("--sizes", ",")) == 2

    def test_config_file_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"samples": 2, "sizes": "8", "seed": 3}))
        rc = main(
            [
                "sweep", "--config", str(cfg),
                "--u-min", "0.9", "--u-max", "0.9", "--u-step", "1",
                "--samples", "3",  # flag beats config
                "--out", str(tmp_path),
            ]
        )
        assert rc == 0
        assert "3 members" in capsys.readouterr().out
        rows = storage.read_curves_csv(tmp_path / "curves.csv")
        assert all(r["n_samples"] == 3 for r in rows)
        assert all(r["master_seed"] == 3 for r in rows)

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("not json at all")
        assert self.run_small(tmp_path, extra=("--config", str(cfg))) == 2
        cfg.write_text("[1, 2]")
        assert self.run_small(tmp_path, extra=("--config", str(cfg))) == 2

    def test_member_aborts_exit_five(self, tmp_path, monkeypatch, capsys):
        class Abort:
            def __init__(self, params, q, alpha, *, zero_kick=False):
                pass

            def run(self, psi, t_max, record, member_offset=0):
                raise evolve.NormDriftError(member_offset, 1, 1e-3)

        monkeypatch.setattr(ensemble, "_Engine", Abort)
        assert self.run_small(tmp_path) == 5
        assert "aborted" in capsys.readouterr().err


class TestFitCommand:
    def test_recovers_synthetic_transition(self, tmp_path, capsys):
        csv = synth_csv(tmp_path / "curves.csv")
        rc = main(
            ["fit", str(csv), "--window", "2.10,2.16", "--boot", "30",
             "--out", str(tmp_path)]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "u_c = " in out and "nu = " in out
        doc = storage.read_json(tmp_path / "fit_report.json")
        assert doc["schema"] == storage.SCHEMA_FIT
        assert abs(doc["u_c"] - 2.13) < 0.003
        assert abs(doc["nu"] - 2.6) / 2.6 < 0.12
        assert abs(doc["sigma_star"] - 0.325) < 0.01
        assert doc["window"] == [2.10, 2.16]
        assert doc["bootstrap_err"]["n_boot"] == 30
        assert [k for k, _ in doc["k_table"]] == list(
            range(1, doc["k_max"] + 1)
        )
        collapse = (tmp_path / "collapse.csv").read_text().splitlines()
        assert collapse[0] == "y,D,sigma_D,N"
        assert len(collapse) == 1 + 3 * 21

    def test_window_restricts_points(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        rc = main(
            ["fit", str(csv), "--window", "2.115,2.145", "--boot", "20",
             "--out", str(tmp_path)]
        )
        assert rc == 0
        doc = storage.read_json(tmp_path / "fit_report.json")
        assert doc["n_points"] < 3 * 21

    def test_missing_window_exits_two(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        assert main(["fit", str(csv)]) == 2

    def test_malformed_window_exits_two(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        assert main(["fit", str(csv), "--window", "2.1"]) == 2

    def test_missing_csv_exits_two(self, tmp_path):
        assert main(["fit", str(tmp_path / "nope.csv"), "--window", "2.1,2.2"]) == 2

    def test_window_outside_data_exits_two(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        assert main(
            ["fit", str(csv), "--window", "3.0,3.1", "--out", str(tmp_path)]
        ) == 2

    def test_single_size_exits_three(self, tmp_path, capsys):
        csv = synth_csv(tmp_path / "curves.csv", sizes=(64,))
        rc = main(
            ["fit", str(csv), "--window", "2.10,2.16", "--out", str(tmp_path)]
        )
        assert rc == 3
        assert "sizes" in capsys.readouterr().err

    def test_size_blind_data_exits_four(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv", sizes=(64, 256), noise=0.0,
                        size_blind=True)
        rc = main(
            ["fit", str(csv), "--window", "2.10,2.16", "--kmax-range", "1,1",
             "--out", str(tmp_path)]
        )
        assert rc == 4

    def test_out_falls_back_to_environment(self, tmp_path, monkeypatch):
        csv = synth_csv(tmp_path / "curves.csv")
        dest = tmp_path / "envout"
        monkeypatch.setenv("QKR_OUT", str(dest))
        rc = main(["fit", str(csv), "--window", "2.10,2.16", "--boot", "20"])
        assert rc == 0
        assert (dest / "fit_report.json").exists()

    def test_config_supplies_window(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"window": "2.10,2.16", "boot": 20}))
        rc = main(
            ["fit", str(csv), "--config", str(cfg), "--out", str(tmp_path)]
        )
        assert rc == 0
        doc = storage.read_json(tmp_path / "fit_report.json")
        assert doc["bootstrap_err"]["n_boot"] == 20


class TestVerifyCommand:
    def test_small_pass(self, capsys):
        rc = main(["verify", "--sizes", "4", "--trials", "2", "--points", "200"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PASSED" in out
        assert "static mapping size 4" in out

    def test_flag_beats_config(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"trials": 1, "points": 50, "sizes": "4"}))
        rc = main(["verify", "--config", str(cfg), "--trials", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "2 instances" in out
        assert "50 random points" in out

    def test_report_file(self, tmp_path):
        rc = main(
            ["verify", "--sizes", "4", "--trials", "1", "--points", "50",
             "--out", str(tmp_path)]
        )
        assert rc == 0
        doc = storage.read_json(tmp_path / "verify_report.json")
        assert doc["schema"] == "qkr-verify-v1"
        assert doc["ok"] is True
        assert doc["identities"]["n_points"] == 50

    def test_oversized_cutoff_exits_two(self):
        assert main(["verify", "--sizes", "64", "--trials", "1"]) == 2

    def test_broken_hopping_detected(self, monkeypatch, capsys):
        from qkr import model

        real = model.w_matrix_general

        def flipped(*a, **kw):
            return -real(*a, **kw)

        monkeypatch.setattr(model, "w_matrix_general", flipped)
        rc = main(["verify", "--sizes", "4", "--trials", "1", "--points", "50"])
        assert rc == 5
        assert "FAILED" in capsys.readouterr().out


class TestCollapseCommand:
    def test_reproduces_fit_collapse(self, tmp_path, capsys):
        csv = synth_csv(tmp_path / "curves.csv")
        fit_dir = tmp_path / "fit"
        main(["fit", str(csv), "--window", "2.10,2.16", "--boot", "20",
              "--out", str(fit_dir)])
        capsys.readouterr()
        col_dir = tmp_path / "col"
        rc = main(
            ["collapse", str(csv), str(fit_dir / "fit_report.json"),
             "--out", str(col_dir)]
        )
        assert rc == 0
        assert (col_dir / "collapse.csv").read_bytes() == (
            fit_dir / "collapse.csv"
        ).read_bytes()

    def test_window_override(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        fit_dir = tmp_path / "fit"
        main(["fit", str(csv), "--window", "2.10,2.16", "--boot", "20",
              "--out", str(fit_dir)])
        col_dir = tmp_path / "col"
        rc = main(
            ["collapse", str(csv), str(fit_dir / "fit_report.json"),
             "--window", "2.12,2.14", "--out", str(col_dir)]
        )
        assert rc == 0
        lines = (col_dir / "collapse.csv").read_text().splitlines()
        assert len(lines) < 1 + 3 * 21

    def test_not_a_fit_report_exits_two(self, tmp_path):
        csv = synth_csv(tmp_path / "curves.csv")
        bogus = tmp_path / "r.json"
        bogus.write_text(json.dumps({"schema": "other"}))
        assert main(["collapse", str(csv), str(bogus)]) == 2

    def test_missing_inputs_exit_two(self, tmp_path):
        assert main(
            ["collapse", str(tmp_path / "a.csv"), str(tmp_path / "b.json")]
        ) == 2
