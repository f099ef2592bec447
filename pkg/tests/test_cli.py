import csv
import json
import logging
import math

import numpy as np
import pytest

from trunc_estim import cli
from trunc_estim.cli import ExperimentConfig, canonical_json, main, read_csv
from trunc_estim.errors import DataError, InvalidParameters


def write_config(tmp_path, **kw):
    base = {"family": "gaussian", "d": 1, "truth": {"mu": [0.0], "sigma": [[1.0]]},
            "survival_set": {"type": "halfspace", "w": [1.0], "tau": 0.0}, "set_class": "halfspace",
            "n": 3000, "alpha": 0.4, "epsilon": 0.1, "seed": 7,
            "pipeline": {"psgd": {"iterations": 20000}}}
    base.update(kw)
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(base))
    return path


def test_gen_full_set(tmp_path):
    cfg = write_config(tmp_path, d=3, truth={"mu": [0, 0, 0], "sigma": np.eye(3).tolist()},
                       survival_set={"type": "full"}, n=100)
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    rows = list(csv.reader(open(tmp_path / "g" / "data.csv")))
    assert rows[0] == ["x0", "x1", "x2"] and len(rows) == 101
    assert all(len(r) == 3 for r in rows)
    truth = json.loads((tmp_path / "g" / "truth.json").read_text())
    assert truth["acceptance_rate"] == 1.0 and truth["seed"] == 7


def test_gen_is_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert main(["gen", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("data.csv", "truth.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "8"])
    assert (tmp_path / "a" / "data.csv").read_bytes() != (tmp_path / "c" / "data.csv").read_bytes()


def test_gen_acceptance_rate_logged(tmp_path, caplog):
    # N(0,1) restricted to x >= 0.5244: mass 0.3
    cfg = write_config(tmp_path, survival_set={"type": "halfspace", "w": [1.0], "tau": 0.5244}, n=20_000)
    with caplog.at_level(logging.INFO, logger="trunc_estim"):
        assert main(["-v", "gen", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    truth = json.loads((tmp_path / "g" / "truth.json").read_text())
    assert abs(truth["acceptance_rate"] - 0.3) <= 0.05
    assert any("acceptance rate" in r.message for r in caplog.records)


def test_config_canonical_round_trip(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path))
    text = cfg.to_json()
    assert ExperimentConfig.from_json(text).to_json() == text
    assert text.endswith("\n") and json.loads(text)["seed"] == 7
    with pytest.raises(InvalidParameters):
        ExperimentConfig.from_dict({"family": "gaussian", "color": "red"})
    with pytest.raises(ValueError):
        canonical_json({"x": math.nan})


def test_estimate_command(tmp_path):
    # 3000 rows leave the third-moment test inside its noise band (learned set = Full);
    # 30000 resolve the half line
    cfg = write_config(tmp_path, n=30_000)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")])
    out = tmp_path / "rep.json"
    assert main(["estimate", "--config", str(cfg), "--data", str(tmp_path / "g" / "data.csv"),
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["experiment"]["seed"] == 7 and rep["seed"] == 7
    assert rep["report"]["config"]["n"] == 30_000
    assert rep["report"]["learned_set"]["type"] == "halfspace"
    theta = np.array(rep["report"]["theta_hat"]["theta"])
    np.testing.assert_allclose(theta, [0.0, 0.5], atol=0.15)
    # rerun gives the same bytes
    out2 = tmp_path / "rep2.json"
    main(["estimate", "--config", str(cfg), "--data", str(tmp_path / "g" / "data.csv"), "--out", str(out2)])
    assert out.read_bytes() == out2.read_bytes()


def test_estimate_repeats(tmp_path, monkeypatch):
    monkeypatch.setenv("TRUNC_ESTIM_THREADS", "1")
    cfg = ExperimentConfig.load(write_config(tmp_path))
    x = np.abs(np.random.default_rng(0).standard_normal((3000, 1)))
    res = cli.cmd_estimate(cfg, x, repeats=5)
    assert len(res["candidates"]) == 5 and len(res["scores"]) == 5
    assert len(set(res["candidate_seeds"])) == 5
    order = sorted(range(5), key=lambda k: (res["scores"][k], k))
    assert res["selected"] == order[2]
    assert res["report"]["theta_hat"] == res["candidates"][res["selected"]]
    assert res["holdout"] == 300


def test_workers_cap(monkeypatch):
    monkeypatch.setenv("TRUNC_ESTIM_THREADS", "1")
    assert cli._workers(8) == 1
    monkeypatch.setenv("TRUNC_ESTIM_THREADS", "many")
    with pytest.raises(InvalidParameters):
        cli._workers(8)


def test_regress_command(tmp_path):
    cfg = write_config(tmp_path, d=1, regression={"w": [2.0], "b": 1.0, "mu_x": [0.0], "sigma_x": [[1.0]]},
                       survival_set={"type": "full"}, n=20_000, alpha=0.25)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "g")])
    assert read_csv(tmp_path / "g" / "data.csv").shape == (20_000, 2)
    out = tmp_path / "reg.json"
    assert main(["regress", "--config", str(cfg), "--data", str(tmp_path / "g" / "data.csv"),
                 "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["w_hat"][0] == pytest.approx(2.0, abs=0.1)
    assert rep["b_hat"] == pytest.approx(1.0, abs=0.1)


def test_verify_command(tmp_path):
    out = tmp_path / "checks.csv"
    assert main(["verify", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [set(r) for r in rows][0] == {"check", "status", "worst_margin"}
    assert len(rows) == 11 and all(r["status"] == "pass" for r in rows)
    text, ok = cli.cmd_verify("hazard")
    assert ok and text.count("\n") == 4


def test_verify_failure_exit_code(monkeypatch):
    bad = cli.verify.CheckResult("always_fails", "hazard", False, -1.0)
    monkeypatch.setitem(cli.verify.CHECKS, "hazard", [lambda: bad])
    assert main(["verify", "--suite", "hazard", "--out", "/dev/null"]) == 1


def test_bench_command(tmp_path):
    rows = cli.bench_psgd(steps=2000, n=1000, repeats=1, backends=["python"])
    assert rows[0]["backend"] == "python" and rows[0]["steps"] == 100
    assert rows[0]["steps_per_second"] > 0
    cfg = write_config(tmp_path, n=1000)
    out = tmp_path / "bench.csv"
    assert main(["bench", "--config", str(cfg), "--repeats", "1", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "backend,repeat,steps,seconds,steps_per_second"


def test_read_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x0,x1\n1.5,2\n-3,4e-2\n")
    np.testing.assert_array_equal(read_csv(p), [[1.5, 2.0], [-3.0, 0.04]])
    p.write_text("1.5,2\n-3,4e-2\n")
    np.testing.assert_array_equal(read_csv(p, 2), [[1.5, 2.0], [-3.0, 0.04]])
    for bad in ("x0\n", "x0,x1\n1,2\n3\n", "x0\n1\nabc\n", "x0\nnan\n"):
        p.write_text(bad)
        with pytest.raises(DataError):
            read_csv(p)
    p.write_text("1,2\n")
    with pytest.raises(DataError, match="columns"):
        read_csv(p, 3)


def test_error_exit_codes(tmp_path, capsys):
    assert main(["estimate", "--config", str(tmp_path / "missing.json"), "--data", "x.csv"]) == 2
    assert "cannot read config" in capsys.readouterr().err
    cfg = write_config(tmp_path, d=2, truth={"mu": [0, 0], "sigma": [[1, 0], [0, 1]]})
    data = tmp_path / "d.csv"
    data.write_text("x0\n1\n2\n")
    assert main(["estimate", "--config", str(cfg), "--data", str(data)]) == 2
    assert "columns" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["gen", "--config", str(tmp_path / "bad.json")]) == 2
    cfg = write_config(tmp_path, family="exponential", truth={"rate": [1.0]},
                       survival_set={"type": "full"}, set_class="halfspace", n=200)
    main(["gen", "--config", str(cfg), "--out", str(tmp_path / "e")])
    assert main(["estimate", "--config", str(cfg), "--data", str(tmp_path / "e" / "data.csv")]) == 2
    assert "Gaussian" in capsys.readouterr().err
