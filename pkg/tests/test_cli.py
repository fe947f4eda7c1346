import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from flipci.baselines import wald_interval
from flipci.cli import EXIT_INPUT, EXIT_NUMERIC, load_data_csv, main
from flipci.deg import synthetic_corpus, write_covariates, write_expression
from flipci.families import gaussian
from flipci.glm import fit_full


def _write_data(path, y, x, z):
    with open(path, "w") as fh:
        fh.write("y,x,z1\n")
        for row in zip(y, x, z):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


@pytest.fixture
def linear_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 60
    x, z = rng.normal(size=n), rng.normal(size=n)
    return _write_data(tmp_path / "lin.csv", 0.4 * x - 0.5 * z + rng.normal(size=n), x, z)


@pytest.fixture
def overdispersed_csv(tmp_path):
    rng = np.random.default_rng(1)
    n = 100
    x, z = rng.normal(size=n), rng.normal(size=n)
    mu = np.exp(1.0 - 0.5 * z)
    y = rng.negative_binomial(1.0, 1.0 / (1.0 + mu))
    return _write_data(tmp_path / "od.csv", y, x, z)


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _table(out):
    lines = [ln for ln in out.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def test_test_at_mle(linear_csv, capsys):
    code, out, _ = _run(["test", linear_csv, "--w", "1000"], capsys)
    assert code == 0
    assert out.startswith("# config: {")
    row = _table(out)[0]
    assert row["beta0"] == row["estimate"]
    assert abs(float(row["p_value"]) - 0.5) <= 0.15


def test_test_w1_is_input_error(linear_csv, capsys):
    code, _, err = _run(["test", linear_csv, "--w", "1"], capsys)
    assert code == EXIT_INPUT
    assert "--w" in err


def test_test_is_deterministic(linear_csv, capsys):
    argv = ["test", linear_csv, "--beta0", "0.1", "--alternative", "less", "--w", "300"]
    _, a, _ = _run(argv, capsys)
    _, b, _ = _run(argv, capsys)
    assert a == b


def test_confint_wald_matches_library(linear_csv, capsys):
    code, out, _ = _run(["confint", linear_csv, "--method", "wald"], capsys)
    assert code == 0
    row = _table(out)[0]
    y, design = load_data_csv(linear_csv)
    ci = wald_interval(fit_full(gaussian(), y, design), 0.05)
    assert float(row["lower"]) == ci.lower
    assert float(row["upper"]) == ci.upper


def test_confint_brackets_mle(linear_csv, capsys):
    code, out, _ = _run(["confint", linear_csv, "--w", "500"], capsys)
    assert code == 0
    row = _table(out)[0]
    assert float(row["lower"]) < float(row["estimate"]) < float(row["upper"])
    assert int(row["p_evaluations"]) > 0


def test_confint_flip_wider_than_wald_when_overdispersed(overdispersed_csv, capsys):
    _, out_f, _ = _run(["confint", overdispersed_csv, "--family", "poisson"], capsys)
    _, out_w, _ = _run(["confint", overdispersed_csv, "--family", "poisson", "--method", "wald"],
                       capsys)
    assert float(_table(out_f)[0]["width"]) >= float(_table(out_w)[0]["width"])


def test_config_replay_is_byte_identical(linear_csv, tmp_path, capsys):
    _, out, _ = _run(["confint", linear_csv, "--method", "symmetric", "--w", "300",
                      "--seed", "5"], capsys)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(out.splitlines()[0][len("# config: "):])
    _, replay, _ = _run(["confint", "--config", str(cfg)], capsys)
    assert replay == out
    assert json.loads(cfg.read_text())["method"] == "symmetric"


def test_config_for_other_subcommand(linear_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "test"}))
    code, _, _ = _run(["confint", linear_csv, "--config", str(cfg)], capsys)
    assert code == EXIT_INPUT


def test_missing_and_bad_inputs(tmp_path, capsys):
    code, _, _ = _run(["test", str(tmp_path / "nope.csv")], capsys)
    assert code == EXIT_INPUT
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x\n1,2\n1,oops\n")
    code, _, err = _run(["confint", str(bad)], capsys)
    assert code == EXIT_INPUT and "row 3" in err
    code, _, _ = _run(["simulate"], capsys)
    assert code == EXIT_INPUT


def test_separated_data_is_numeric_failure(tmp_path, capsys):
    x = np.array([-2.0, -1.5, -1, -0.5, 0.5, 1, 1.5, 2])
    z = np.array([0.1, -0.2, 0.3, 0.0, -0.1, 0.2, -0.3, 0.4])
    p = _write_data(tmp_path / "sep.csv", (x > 0).astype(float), x, z)
    code, _, err = _run(["test", p, "--family", "bernoulli", "--w", "100"], capsys)
    assert code == EXIT_NUMERIC
    assert "numerical failure" in err


def test_simulate_lm_correct(tmp_path, capsys):
    out = tmp_path / "sim.csv"
    code, _, _ = _run(["simulate", "--scenario", "lm-correct", "--N", "50", "--reps", "200",
                       "--w", "200", "--out", str(out)], capsys)
    assert code == 0
    text = out.read_text()
    assert text.startswith("# config: ")
    rows = _table(text)
    cov = {r["method"]: float(r["coverage"]) for r in rows}
    assert 0.90 < cov["flip-equitailed"] < 0.99
    assert 0.90 < cov["flip-symmetric"] < 0.99


def test_simulate_unknown_scenario(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scenario", "bogus"])
    assert exc.value.code != 0
    assert "lm-correct" in capsys.readouterr().err


def test_simulate_single_rep(tmp_path, capsys):
    reps_out = tmp_path / "reps.csv"
    code, out, _ = _run(["simulate", "--scenario", "pois-correct", "--reps", "1", "--w", "100",
                         "--N", "30", "40", "--reps-out", str(reps_out)], capsys)
    assert code == 0
    rows = _table(out)
    assert len(rows) == 8
    assert {r["N"] for r in rows} == {"30", "40"}
    assert reps_out.read_text().count("flip-equitailed") == 2


def test_deg_subcommand(tmp_path, capsys):
    expr, cov = synthetic_corpus(3, 40, seed=2)
    write_expression(tmp_path / "e.csv", expr)
    write_covariates(tmp_path / "c.csv", cov)
    out = tmp_path / "out"
    argv = ["deg", "--counts", str(tmp_path / "e.csv"), "--covariates", str(tmp_path / "c.csv"),
            "--out", str(out), "--w", "200"]
    code, stdout, _ = _run(argv, capsys)
    assert code == 0
    first = (out / "results.csv").read_bytes()
    assert (out / "summary.csv").exists()
    assert "genes,3" in stdout
    _run(argv, capsys)
    assert (out / "results.csv").read_bytes() == first


def test_module_entry_point(linear_csv):
    proc = subprocess.run([sys.executable, "-m", "flipci", "confint", linear_csv, "--method",
                           "sandwich", "--hc1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "sandwich" in proc.stdout
