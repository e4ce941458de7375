import csv
import json
import math

import numpy as np
import pytest

from csh_vortex.cli import load_config, main
from csh_vortex.torus import read_field_bin, read_field_csv


def write_config(tmp_path, **changes):
    cfg = {
        "n": 2,
        "domain": {"L1": 1.0, "L2": 1.0},
        "grid": {"n1": 32, "n2": 32},
        "vortices": [[{"x": 0.3, "y": 0.4}], [{"x": 0.7, "y": 0.65, "multiplicity": 1}]],
        "lambda": {"multiples_of_lambda0": 8},
        "solver": {"tol": 1e-8},
        "output": {"dir": str(tmp_path / "out"), "formats": ["csv", "bin"]},
    }
    cfg.update(changes)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


def test_check_passes(capsys):
    assert main(["check", "--n", "2"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10


def test_check_large_rank_with_seed(capsys):
    assert main(["check", "--n", "30", "--seed", "5"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_check_rejects_small_rank(capsys):
    assert main(["check", "--n", "1"]) == 2
    assert "rank must be ≥ 2" in capsys.readouterr().err


def test_solve_writes_artifacts(tmp_path, capsys):
    path = write_config(tmp_path)
    assert main(["solve", "--config", str(path)]) == 0
    out = tmp_path / "out"
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"] and diag["lemma1_ok"]
    np.testing.assert_allclose(diag["Q"], diag["Q_target"], rtol=1e-3)
    assert diag["lambda_ratio"] == pytest.approx(8.0)
    for name in ("v", "u0", "eu"):
        for i in (1, 2):
            g, f = read_field_csv(out / "fields" / f"{name}_{i}.csv")
            g2, f2 = read_field_bin(out / "fields" / f"{name}_{i}.bin")
            assert g == g2 and f.shape == (32, 32)
            np.testing.assert_array_equal(f, f2)
    _, v = read_field_csv(out / "fields" / "v_1.csv")
    _, u0 = read_field_csv(out / "fields" / "u0_1.csv")
    _, eu = read_field_csv(out / "fields" / "eu_1.csv")
    np.testing.assert_allclose(eu, np.exp(u0 + v), rtol=1e-15)


def test_solve_is_deterministic_and_echo_round_trips(tmp_path):
    path = write_config(tmp_path)
    main(["solve", "--config", str(path)])
    first = (tmp_path / "out" / "diagnostics.json").read_bytes()
    main(["solve", "--config", str(path)])
    assert (tmp_path / "out" / "diagnostics.json").read_bytes() == first
    echo = tmp_path / "out" / "config.resolved.json"
    run = load_config(echo)
    assert run.lambdas == load_config(path).lambdas
    main(["solve", "--config", str(echo), "--out", str(tmp_path / "again")])
    assert (tmp_path / "again" / "diagnostics.json").read_bytes() == first


def test_solve_setup_matches_scalar_lambda(tmp_path):
    run = load_config(write_config(tmp_path, **{"lambda": 128 * math.pi}))
    assert run.lambdas == [128 * math.pi]
    assert run.lambda0 == pytest.approx(16 * math.pi)


def test_solve_below_lambda0_warns(tmp_path, capsys, caplog):
    path = write_config(tmp_path, **{"lambda": {"multiples_of_lambda0": 0.5}})
    assert main(["solve", "--config", str(path)]) == 1
    # the warning goes through logging, which pytest intercepts
    assert "below necessary threshold" in capsys.readouterr().err + caplog.text
    diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert diag["converged"] is False


def test_vortex_outside_domain(tmp_path, capsys):
    path = write_config(tmp_path, vortices=[[{"x": 1.5, "y": 0.5}], [{"x": 0.2, "y": 0.2}]])
    assert main(["solve", "--config", str(path)]) == 2
    assert "vortex outside domain" in capsys.readouterr().err


@pytest.mark.parametrize("changes,needle", [
    ({"grid": {"n1": 32, "n2": "x"}}, "grid/n2"),
    ({"n": 3}, "components"),
    ({"lambda": -1}, "lambda"),
    ({"solver": {"init_mode": "random"}}, "solver/init_mode"),
    ({"extra": 1}, "extra"),
])
def test_malformed_config(tmp_path, capsys, changes, needle):
    path = write_config(tmp_path, **changes)
    assert main(["solve", "--config", str(path)]) == 2
    assert needle in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "n": 2,\n  "domain": {L1: 1}\n}')
    assert main(["solve", "--config", str(path)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_background_command(tmp_path):
    path = write_config(tmp_path)
    assert main(["background", "--config", str(path)]) == 0
    g, u = read_field_csv(tmp_path / "out" / "fields" / "u0_2.csv")
    assert abs(u.mean()) <= 1e-12 * np.abs(u).max()


def test_sweep_csv(tmp_path):
    path = write_config(tmp_path, **{"lambda": {"multiples_of_lambda0": [0.9, 4, 8]}})
    assert main(["sweep", "--config", str(path)]) == 0
    with open(tmp_path / "out" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["lambda", "converged", "J", "grad_norm", "residual_max",
                             "D_1", "D_2", "Q_1", "Q_2", "Q_target_1", "Q_target_2"]
    assert [r["converged"] for r in rows] == ["0", "1", "1"]
    assert float(rows[2]["D_1"]) < float(rows[1]["D_1"])
    assert float(rows[1]["Q_target_1"]) == pytest.approx(-4 * math.pi / float(rows[1]["lambda"]))
    assert (tmp_path / "out" / "sweep" / "diagnostics_002.json").exists()


def test_solve_rejects_lambda_list(tmp_path, capsys):
    path = write_config(tmp_path, **{"lambda": [100.0, 200.0]})
    assert main(["solve", "--config", str(path)]) == 2
    assert "sweep" in capsys.readouterr().err
