import csv

import pytest

from hypspde.cli import build_parser, main


def test_parser_has_all_subcommands():
    p = build_parser()
    for cmd in ("simulate", "estimate", "mc-study", "oracle-check", "rates"):
        args = p.parse_args([cmd, "--seed", "1", "--out", "x", "--integrator", "euler", "--threads", "2"])
        assert args.command == cmd and args.integrator == "euler" and args.threads == 2


def test_simulate_writes_outputs(tmp_path):
    assert main(["simulate", "--preset", "wave_weak", "--delta", "0.1", "--N", "2", "--n-steps", "50", "--out", str(tmp_path)]) == 0
    for name in ("paths.bin", "paths.csv", "measurements_000.csv", "measurements_001.csv", "simulate_summary.txt"):
        assert (tmp_path / name).exists()


def test_estimate_with_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('preset = "plate_structural"\n[estimate]\ndelta = 0.1\nN = 3\nc_h = 0.05\n')
    assert main(["estimate", "--config", str(cfg), "--seed", "3", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "estimate.csv")))
    assert rows[0]["N"] == "3" and float(rows[0]["theta1_hat"]) < 0


def test_study_and_rates_roundtrip(tmp_path):
    assert main(["mc-study", "--preset", "plate_structural", "--deltas", "0.1", "0.07", "--replicates", "2",
                 "--c-h", "0.05", "--out", str(tmp_path)]) == 0
    assert main(["rates", "--input", str(tmp_path / "study_cells.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "rates.txt").read_text().startswith("theta1: slope = ")
    assert (tmp_path / "study_rmse.svg").read_text().startswith("<svg")


def test_oracle_check(tmp_path):
    assert main(["oracle-check", "--preset", "plate_structural", "--deltas", "0.2", "0.1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "fisher_limits.csv").exists() and (tmp_path / "scaling_limits.csv").exists()


def test_infeasible_design_exits_cleanly(tmp_path, capsys):
    code = main(["mc-study", "--preset", "plate_structural", "--deltas", "0.2", "--replicates", "2", "--out", str(tmp_path)])
    assert code == 2
    assert "PlacementError" in capsys.readouterr().err


def test_bad_seed_rejected(tmp_path):
    with pytest.raises(SystemExit):
        main(["simulate", "--seed", "-1", "--out", str(tmp_path)])
